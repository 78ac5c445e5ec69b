#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "casreader/error.hpp"

namespace casreader {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array of doubles. Rank-1 tensors behave as a single row
/// wherever an operation expects a matrix.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty when absent

  Tensor() = default;

  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(shape_size(shape), fill) {
    check_shape();
  }

  Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    check_shape();
    if (data.size() != shape_size(shape)) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_string(shape));
    }
  }

  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(values));
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.size() == 1 ? 1 : shape.at(0); }
  std::size_t cols() const { return shape.size() == 1 ? shape[0] : shape.at(1); }

  double& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

  void enable_grad() {
    requires_grad = true;
    grad.assign(data.size(), 0.0);
  }

  void zero_grad() {
    if (requires_grad) grad.assign(data.size(), 0.0);
  }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
  }

  bool operator==(const Tensor& other) const {
    return shape == other.shape && data == other.data;
  }

 private:
  void check_shape() const {
    if (shape.empty() || shape.size() > 2) {
      throw DimensionError("tensors must be rank 1 or 2, got " + shape_string(shape));
    }
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("zero extent in shape " + shape_string(shape));
    }
  }
};

enum class OpKind {
  constant,
  leaf,
  parameter,
  matmul,
  transpose,
  add,
  sub,
  mul,
  add_row,
  sigmoid,
  tanh,
  one_minus,
  max,
  scale,
  log,
  masked_softmax,
  sum_rows,
  row,
  stack_rows,
  concat_cols,
  slice_cols,
  gather_rows,
  mul_const,
  select_sum,
  sum,
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const {
    if (!tape_) throw UsageError("use of an unbound Var");
    return *tape_;
  }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Operation-specific state kept for the backward rule.
struct SavedState {
  std::vector<std::size_t> indices;
  std::vector<bool> mask;
  Tensor tensor;
  double scalar = 0.0;
  std::size_t offset = 0;
};

/// The computation record: nodes are appended in evaluation order, so the
/// node list is topologically sorted by construction.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(OpKind::constant, {}, std::move(value), {}, false); }

  /// Owned leaf whose gradient is readable through grad() after backward().
  Var leaf(Tensor value) { return push(OpKind::leaf, {}, std::move(value), {}, true); }

  /// Leaf bound to caller-owned storage. backward() accumulates into param.grad.
  Var parameter(Tensor& param) {
    if (!param.requires_grad) param.enable_grad();
    if (param.grad.size() != param.data.size()) param.grad.assign(param.data.size(), 0.0);
    Node node;
    node.kind = OpKind::parameter;
    node.external = &param;
    node.needs_grad = true;
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
  }

  Var record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, SavedState saved = {}) {
    bool needs = false;
    for (std::size_t in : inputs) needs = needs || nodes_.at(in).needs_grad;
    return push(kind, std::move(inputs), std::move(value), std::move(saved), needs);
  }

  const Tensor& value(Var v) const { return node_value(check(v)); }

  /// Gradient of the last backward() output with respect to v.
  std::span<const double> grad(Var v) const {
    const Node& node = nodes_[check(v)];
    if (node.kind == OpKind::parameter) return node.external->grad;
    if (!backward_done_) throw UsageError("gradient requested before backward()");
    return node.grad;
  }

  std::size_t size() const { return nodes_.size(); }
  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }

  void backward(Var output) {
    const Tensor& out = value(output);
    if (out.size() != 1) {
      throw UsageError("backward() without a seed needs a scalar output, got " +
                       shape_string(out.shape));
    }
    backward(output, Tensor(out.shape, 1.0));
  }

  void backward(Var output, const Tensor& seed);

 private:
  struct Node {
    OpKind kind = OpKind::constant;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor* external = nullptr;
    std::vector<double> grad;
    SavedState saved;
    bool needs_grad = false;
  };

  std::size_t check(Var v) const {
    if (!v.valid()) throw UsageError("backward/value on an unrecorded Var (no forward pass)");
    if (&v.tape() != this) throw UsageError("Var belongs to a different tape");
    if (v.id() >= nodes_.size()) throw UsageError("Var id out of range for this tape");
    return v.id();
  }

  const Tensor& node_value(std::size_t id) const {
    const Node& node = nodes_[id];
    return node.external ? *node.external : node.value;
  }

  Var push(OpKind kind, std::vector<std::size_t> inputs, Tensor value, SavedState saved,
           bool needs) {
    Node node;
    node.kind = kind;
    node.inputs = std::move(inputs);
    node.value = std::move(value);
    node.saved = std::move(saved);
    node.needs_grad = needs;
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
  }

  void accumulate(std::size_t id, std::size_t index, double g) { grad_buffer(id)[index] += g; }

  std::vector<double>& grad_buffer(std::size_t id) {
    Node& node = nodes_[id];
    return node.kind == OpKind::parameter ? node.external->grad : node.grad;
  }

  void backward_node(std::size_t id);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return tape().value(*this); }

inline void Tape::backward(Var output, const Tensor& seed) {
  const std::size_t out = check(output);
  if (seed.shape != node_value(out).shape) {
    throw DimensionError("seed shape " + shape_string(seed.shape) + " does not match output " +
                         shape_string(node_value(out).shape));
  }
  for (std::size_t i = 0; i <= out; ++i) {
    Node& node = nodes_[i];
    if (node.kind != OpKind::parameter) {
      node.grad.assign(node.needs_grad ? node.value.size() : 0, 0.0);
    }
  }
  if (nodes_[out].needs_grad) {
    auto& g = grad_buffer(out);
    for (std::size_t k = 0; k < seed.size(); ++k) g[k] += seed.data[k];
  }
  backward_done_ = true;
  // Parameter nodes accumulate straight into caller storage, so the seed for
  // a parameter output is applied above and nothing is left to propagate.
  for (std::size_t i = out + 1; i-- > 0;) {
    if (nodes_[i].needs_grad && !nodes_[i].inputs.empty()) backward_node(i);
  }
}

inline void Tape::backward_node(std::size_t id) {
  // Copy what we need up front: accumulate() may touch other nodes but never
  // reallocates nodes_.
  const Node& node = nodes_[id];
  const std::vector<double>& g = node.grad;
  const Tensor& y = node.value;
  const auto& in = node.inputs;
  auto needs = [&](std::size_t k) { return nodes_[in[k]].needs_grad; };

  switch (node.kind) {
    case OpKind::constant:
    case OpKind::leaf:
    case OpKind::parameter:
      return;
    case OpKind::matmul: {
      const Tensor& a = node_value(in[0]);
      const Tensor& b = node_value(in[1]);
      const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
      if (needs(0)) {
        auto& da = grad_buffer(in[0]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * b.data[p * n + j];
            da[i * k + p] += acc;
          }
      }
      if (needs(1)) {
        auto& db = grad_buffer(in[1]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = a.data[i * k + p];
            for (std::size_t j = 0; j < n; ++j) db[p * n + j] += aip * g[i * n + j];
          }
      }
      return;
    }
    case OpKind::transpose: {
      const std::size_t r = y.rows(), c = y.cols();
      auto& da = grad_buffer(in[0]);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) da[j * r + i] += g[i * c + j];
      return;
    }
    case OpKind::add:
    case OpKind::sub: {
      const double sign = node.kind == OpKind::add ? 1.0 : -1.0;
      if (needs(0)) {
        auto& da = grad_buffer(in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      }
      if (needs(1)) {
        auto& db = grad_buffer(in[1]);
        for (std::size_t i = 0; i < g.size(); ++i) db[i] += sign * g[i];
      }
      return;
    }
    case OpKind::mul: {
      const Tensor& a = node_value(in[0]);
      const Tensor& b = node_value(in[1]);
      if (needs(0)) {
        auto& da = grad_buffer(in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * b.data[i];
      }
      if (needs(1)) {
        auto& db = grad_buffer(in[1]);
        for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * a.data[i];
      }
      return;
    }
    case OpKind::add_row: {
      const std::size_t r = y.rows(), c = y.cols();
      if (needs(0)) {
        auto& da = grad_buffer(in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      }
      if (needs(1)) {
        auto& db = grad_buffer(in[1]);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) db[j] += g[i * c + j];
      }
      return;
    }
    case OpKind::sigmoid: {
      auto& da = grad_buffer(in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * y.data[i] * (1.0 - y.data[i]);
      return;
    }
    case OpKind::tanh: {
      auto& da = grad_buffer(in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * (1.0 - y.data[i] * y.data[i]);
      return;
    }
    case OpKind::one_minus: {
      auto& da = grad_buffer(in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] -= g[i];
      return;
    }
    case OpKind::max: {
      const Tensor& a = node_value(in[0]);
      const Tensor& b = node_value(in[1]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        // ties route to the first operand
        const std::size_t target = a.data[i] >= b.data[i] ? 0 : 1;
        if (needs(target)) accumulate(in[target], i, g[i]);
      }
      return;
    }
    case OpKind::scale: {
      auto& da = grad_buffer(in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += node.saved.scalar * g[i];
      return;
    }
    case OpKind::log: {
      const Tensor& a = node_value(in[0]);
      auto& da = grad_buffer(in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] / a.data[i];
      return;
    }
    case OpKind::masked_softmax: {
      const std::size_t r = y.rows(), c = y.cols();
      auto& da = grad_buffer(in[0]);
      for (std::size_t i = 0; i < r; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += y.data[i * c + j] * g[i * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          if (!node.saved.mask[j]) continue;
          da[i * c + j] += y.data[i * c + j] * (g[i * c + j] - dot);
        }
      }
      return;
    }
    case OpKind::sum_rows: {
      const Tensor& a = node_value(in[0]);
      const std::size_t r = a.rows(), c = a.cols();
      auto& da = grad_buffer(in[0]);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) da[i * c + j] += g[j];
      return;
    }
    case OpKind::row: {
      const std::size_t c = y.cols();
      const std::size_t base = node.saved.offset * c;
      auto& da = grad_buffer(in[0]);
      for (std::size_t j = 0; j < c; ++j) da[base + j] += g[j];
      return;
    }
    case OpKind::stack_rows: {
      const std::size_t c = y.cols();
      for (std::size_t k = 0; k < in.size(); ++k) {
        if (!needs(k)) continue;
        auto& da = grad_buffer(in[k]);
        for (std::size_t j = 0; j < c; ++j) da[j] += g[k * c + j];
      }
      return;
    }
    case OpKind::concat_cols: {
      const std::size_t r = y.rows(), c = y.cols();
      const std::size_t p = node_value(in[0]).cols();
      const std::size_t q = c - p;
      if (needs(0)) {
        auto& da = grad_buffer(in[0]);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < p; ++j) da[i * p + j] += g[i * c + j];
      }
      if (needs(1)) {
        auto& db = grad_buffer(in[1]);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < q; ++j) db[i * q + j] += g[i * c + p + j];
      }
      return;
    }
    case OpKind::slice_cols: {
      const std::size_t r = y.rows(), w = y.cols();
      const std::size_t src_cols = node_value(in[0]).cols();
      auto& da = grad_buffer(in[0]);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) da[i * src_cols + node.saved.offset + j] += g[i * w + j];
      return;
    }
    case OpKind::gather_rows: {
      const std::size_t c = y.cols();
      auto& da = grad_buffer(in[0]);
      for (std::size_t k = 0; k < node.saved.indices.size(); ++k) {
        const std::size_t base = node.saved.indices[k] * c;
        for (std::size_t j = 0; j < c; ++j) da[base + j] += g[k * c + j];
      }
      return;
    }
    case OpKind::mul_const: {
      auto& da = grad_buffer(in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * node.saved.tensor.data[i];
      return;
    }
    case OpKind::select_sum: {
      auto& da = grad_buffer(in[0]);
      for (std::size_t pos : node.saved.indices) da[pos] += g[0];
      return;
    }
    case OpKind::sum: {
      auto& da = grad_buffer(in[0]);
      for (double& d : da) d += g[0];
      return;
    }
  }
}

namespace detail {

inline Tape& same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw UsageError("operands recorded on different tapes");
  return a.tape();
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape) + " vs " +
                         shape_string(b.shape));
  }
}

inline Tensor as_matrix(Tensor t) {
  if (t.rank() == 1) t.shape = {1, t.shape[0]};
  return t;
}

template <typename F>
Var unary(Var a, OpKind kind, F f) {
  Tensor out = as_matrix(a.value());
  for (double& v : out.data) v = f(v);
  return a.tape().record(kind, {a.id()}, std::move(out));
}

}  // namespace detail

// ---- forward operations -------------------------------------------------

inline Var matmul(Var a, Var b) {
  Tape& tape = detail::same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.rows()) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(x.shape) + " x " +
                         shape_string(y.shape));
  }
  const std::size_t m = x.rows(), k = x.cols(), n = y.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double xip = x.data[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += xip * y.data[p * n + j];
    }
  return tape.record(OpKind::matmul, {a.id(), b.id()}, std::move(out));
}

inline Var transpose(Var a) {
  const Tensor& x = a.value();
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data[j * r + i] = x.data[i * c + j];
  return a.tape().record(OpKind::transpose, {a.id()}, std::move(out));
}

namespace detail {
template <typename F>
Var binary(Var a, Var b, OpKind kind, const char* name, F f) {
  Tape& tape = same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, name);
  Tensor out = as_matrix(x);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = f(x.data[i], y.data[i]);
  return tape.record(kind, {a.id(), b.id()}, std::move(out));
}
}  // namespace detail

inline Var add(Var a, Var b) {
  return detail::binary(a, b, OpKind::add, "add", [](double x, double y) { return x + y; });
}
inline Var sub(Var a, Var b) {
  return detail::binary(a, b, OpKind::sub, "sub", [](double x, double y) { return x - y; });
}
inline Var mul(Var a, Var b) {
  return detail::binary(a, b, OpKind::mul, "mul", [](double x, double y) { return x * y; });
}
/// Pointwise maximum; the backward subgradient favours `a` on exact ties.
inline Var max(Var a, Var b) {
  return detail::binary(a, b, OpKind::max, "max", [](double x, double y) { return x >= y ? x : y; });
}

/// a[r x c] + bias[c] broadcast over rows.
inline Var add_row(Var a, Var bias) {
  Tape& tape = detail::same_tape(a, bias);
  const Tensor& x = a.value();
  const Tensor& b = bias.value();
  if (b.rows() != 1 || b.cols() != x.cols()) {
    throw DimensionError("add_row: bias " + shape_string(b.shape) + " does not fit " +
                         shape_string(x.shape));
  }
  Tensor out = detail::as_matrix(x);
  const std::size_t c = out.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i % c];
  return tape.record(OpKind::add_row, {a.id(), bias.id()}, std::move(out));
}

inline Var sigmoid(Var a) {
  return detail::unary(a, OpKind::sigmoid, [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}
inline Var tanh(Var a) {
  return detail::unary(a, OpKind::tanh, [](double v) { return std::tanh(v); });
}
inline Var one_minus(Var a) {
  return detail::unary(a, OpKind::one_minus, [](double v) { return 1.0 - v; });
}
inline Var log(Var a) {
  return detail::unary(a, OpKind::log, [](double v) { return std::log(v); });
}

inline Var scale(Var a, double factor) {
  Tensor out = detail::as_matrix(a.value());
  for (double& v : out.data) v *= factor;
  SavedState saved;
  saved.scalar = factor;
  return a.tape().record(OpKind::scale, {a.id()}, std::move(out), std::move(saved));
}

/// Row-wise softmax restricted to positions where mask is true. Masked
/// entries are exactly zero.
inline Var masked_softmax(Var logits, const std::vector<bool>& mask) {
  Tensor out = detail::as_matrix(logits.value());
  const std::size_t r = out.rows(), c = out.cols();
  if (mask.size() != c) {
    throw DimensionError("masked_softmax: mask length " + std::to_string(mask.size()) +
                         " vs width " + std::to_string(c));
  }
  if (std::none_of(mask.begin(), mask.end(), [](bool m) { return m; })) {
    throw EmptySupportError("masked_softmax: every position is masked");
  }
  for (std::size_t i = 0; i < r; ++i) {
    double* row = out.data.data() + i * c;
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j)
      if (mask[j]) top = std::max(top, row[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      row[j] = mask[j] ? std::exp(row[j] - top) : 0.0;
      total += row[j];
    }
    for (std::size_t j = 0; j < c; ++j) row[j] /= total;
  }
  SavedState saved;
  saved.mask = mask;
  return logits.tape().record(OpKind::masked_softmax, {logits.id()}, std::move(out),
                              std::move(saved));
}

/// Column sums: [r x c] -> [1 x c].
inline Var sum_rows(Var a) {
  const Tensor& x = a.value();
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out({1, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data[j] += x.data[i * c + j];
  return a.tape().record(OpKind::sum_rows, {a.id()}, std::move(out));
}

inline Var row(Var a, std::size_t index) {
  const Tensor& x = a.value();
  if (index >= x.rows()) {
    throw IndexError("row " + std::to_string(index) + " out of range for " + shape_string(x.shape));
  }
  const std::size_t c = x.cols();
  Tensor out({1, c}, std::vector<double>(x.data.begin() + index * c, x.data.begin() + (index + 1) * c));
  SavedState saved;
  saved.offset = index;
  return a.tape().record(OpKind::row, {a.id()}, std::move(out), std::move(saved));
}

/// Stacks single-row values into a matrix.
inline Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw UsageError("stack_rows: no rows");
  Tape& tape = rows.front().tape();
  const std::size_t c = rows.front().value().cols();
  std::vector<double> values;
  values.reserve(rows.size() * c);
  std::vector<std::size_t> ids;
  ids.reserve(rows.size());
  for (Var r : rows) {
    const Tensor& x = detail::same_tape(rows.front(), r).value(r);
    if (x.rows() != 1 || x.cols() != c) {
      throw DimensionError("stack_rows: row shape " + shape_string(x.shape) + " vs width " +
                           std::to_string(c));
    }
    values.insert(values.end(), x.data.begin(), x.data.end());
    ids.push_back(r.id());
  }
  return tape.record(OpKind::stack_rows, std::move(ids), Tensor({rows.size(), c}, std::move(values)));
}

inline Var concat_cols(Var a, Var b) {
  Tape& tape = detail::same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rows() != y.rows()) {
    throw DimensionError("concat_cols: row counts differ " + shape_string(x.shape) + " vs " +
                         shape_string(y.shape));
  }
  const std::size_t r = x.rows(), p = x.cols(), q = y.cols();
  Tensor out({r, p + q});
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(x.data.begin() + i * p, p, out.data.begin() + i * (p + q));
    std::copy_n(y.data.begin() + i * q, q, out.data.begin() + i * (p + q) + p);
  }
  return tape.record(OpKind::concat_cols, {a.id(), b.id()}, std::move(out));
}

inline Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  if (begin >= end || end > x.cols()) {
    throw IndexError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + shape_string(x.shape));
  }
  const std::size_t r = x.rows(), c = x.cols(), w = end - begin;
  Tensor out({r, w});
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(x.data.begin() + i * c + begin, w, out.data.begin() + i * w);
  SavedState saved;
  saved.offset = begin;
  return a.tape().record(OpKind::slice_cols, {a.id()}, std::move(out), std::move(saved));
}

/// Selects rows by index; the backward pass scatter-adds into the source.
inline Var gather_rows(Var table, std::span<const std::size_t> indices) {
  const Tensor& x = table.value();
  if (indices.empty()) throw UsageError("gather_rows: empty index list");
  const std::size_t c = x.cols();
  Tensor out({indices.size(), c});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= x.rows()) {
      throw IndexError("row index " + std::to_string(indices[k]) + " out of range [0, " +
                       std::to_string(x.rows()) + ")");
    }
    std::copy_n(x.data.begin() + indices[k] * c, c, out.data.begin() + k * c);
  }
  SavedState saved;
  saved.indices.assign(indices.begin(), indices.end());
  return table.tape().record(OpKind::gather_rows, {table.id()}, std::move(out), std::move(saved));
}

/// Pointwise product with a constant tensor (no gradient to the constant).
inline Var mul_const(Var a, Tensor factor) {
  const Tensor& x = a.value();
  detail::require_same_shape(x, factor, "mul_const");
  Tensor out = detail::as_matrix(x);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= factor.data[i];
  SavedState saved;
  saved.tensor = std::move(factor);
  return a.tape().record(OpKind::mul_const, {a.id()}, std::move(out), std::move(saved));
}

/// Sum of the flat entries at `positions`, in the given order, as a scalar.
inline Var select_sum(Var a, std::span<const std::size_t> positions) {
  const Tensor& x = a.value();
  double total = 0.0;
  for (std::size_t p : positions) {
    if (p >= x.size()) throw IndexError("select_sum: position " + std::to_string(p) + " out of range");
    total += x.data[p];
  }
  SavedState saved;
  saved.indices.assign(positions.begin(), positions.end());
  return a.tape().record(OpKind::select_sum, {a.id()}, Tensor({1}, {total}), std::move(saved));
}

inline Var sum(Var a) {
  const Tensor& x = a.value();
  double total = 0.0;
  for (double v : x.data) total += v;
  return a.tape().record(OpKind::sum, {a.id()}, Tensor({1}, {total}));
}

// ---- gradient oracle ------------------------------------------------------

using LossBuilder = std::function<Var(Tape&)>;

inline double evaluate_loss(const LossBuilder& loss) {
  Tape tape;
  const Tensor& v = loss(tape).value();
  if (v.size() != 1) throw UsageError("loss must be scalar, got " + shape_string(v.shape));
  if (!std::isfinite(v.data[0])) throw NumericError("non-finite loss value");
  return v.data[0];
}

/// Compares reverse-mode gradients of `loss` against central differences.
/// `loss` must bind every entry of `params` with Tape::parameter and be a
/// deterministic function of them. Returns the largest relative error
/// |ga - gf| / max(1e-8, |ga| + |gf|) over all parameter entries.
inline double grad_check(const LossBuilder& loss, std::span<Tensor* const> params,
                         double epsilon = 1e-5) {
  for (Tensor* p : params) p->enable_grad();
  {
    Tape tape;
    Var out = loss(tape);
    if (!std::isfinite(out.value().data.at(0))) throw NumericError("non-finite loss value");
    tape.backward(out);
  }
  double worst = 0.0;
  for (Tensor* p : params) {
    const std::vector<double> analytic = p->grad;
    for (std::size_t i = 0; i < p->data.size(); ++i) {
      const double saved = p->data[i];
      p->data[i] = saved + epsilon;
      const double up = evaluate_loss(loss);
      p->data[i] = saved - epsilon;
      const double down = evaluate_loss(loss);
      p->data[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double err =
          std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace casreader
