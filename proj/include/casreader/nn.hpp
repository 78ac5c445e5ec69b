#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "casreader/error.hpp"
#include "casreader/rng.hpp"
#include "casreader/tensor.hpp"

namespace casreader {

// ---- initializers -----------------------------------------------------------

inline Tensor uniform_init(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  if (!(bound > 0.0)) throw ConfigError("uniform_init: bound must be positive");
  Tensor out({rows, cols});
  for (double& v : out.data) v = rng.uniform(-bound, bound);
  return out;
}

/// Orthogonal matrix built from a standard-normal draw. Columns are
/// orthonormal when rows >= cols, rows otherwise. Gram-Schmidt is run twice
/// so the result is orthogonal to working precision.
inline Tensor orthogonal_init(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows == 0 || cols == 0) throw ConfigError("orthogonal_init: empty shape");
  const bool by_columns = rows >= cols;
  const std::size_t count = by_columns ? cols : rows;  // vectors to orthonormalize
  const std::size_t dim = by_columns ? rows : cols;    // their length
  std::vector<std::vector<double>> basis(count, std::vector<double>(dim));
  for (auto& v : basis)
    for (double& x : v) x = rng.normal();

  for (std::size_t k = 0; k < count; ++k) {
    auto& v = basis[k];
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t prev = 0; prev < k; ++prev) {
        double dot = 0.0;
        for (std::size_t i = 0; i < dim; ++i) dot += v[i] * basis[prev][i];
        for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * basis[prev][i];
      }
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      for (double& x : v) x /= norm;
    }
  }

  Tensor out({rows, cols});
  for (std::size_t k = 0; k < count; ++k)
    for (std::size_t i = 0; i < dim; ++i) {
      if (by_columns) {
        out.at(i, k) = basis[k][i];
      } else {
        out.at(k, i) = basis[k][i];
      }
    }
  return out;
}

// ---- parameter containers ---------------------------------------------------

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

/// Update/reset-gate GRU. Input weights are [hidden x input], recurrent
/// weights [hidden x hidden], biases [hidden].
struct GruParams {
  Tensor w_z, w_r, w_h;
  Tensor u_z, u_r, u_h;
  Tensor b_z, b_r, b_h;

  static GruParams zeros(std::size_t input_dim, std::size_t hidden_dim) {
    GruParams p;
    p.w_z = p.w_r = p.w_h = Tensor({hidden_dim, input_dim});
    p.u_z = p.u_r = p.u_h = Tensor({hidden_dim, hidden_dim});
    p.b_z = p.b_r = p.b_h = Tensor({hidden_dim});
    return p;
  }

  /// Input weights uniform in [-0.1, 0.1], recurrent weights orthogonal,
  /// biases zero.
  static GruParams init(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
    GruParams p = zeros(input_dim, hidden_dim);
    p.w_z = uniform_init(hidden_dim, input_dim, 0.1, rng);
    p.w_r = uniform_init(hidden_dim, input_dim, 0.1, rng);
    p.w_h = uniform_init(hidden_dim, input_dim, 0.1, rng);
    p.u_z = orthogonal_init(hidden_dim, hidden_dim, rng);
    p.u_r = orthogonal_init(hidden_dim, hidden_dim, rng);
    p.u_h = orthogonal_init(hidden_dim, hidden_dim, rng);
    return p;
  }

  std::size_t input_dim() const { return w_z.cols(); }
  std::size_t hidden_dim() const { return w_z.rows(); }

  void validate() const {
    const std::size_t h = hidden_dim(), in = input_dim();
    for (const Tensor* w : {&w_z, &w_r, &w_h})
      if (w->rows() != h || w->cols() != in || w->rank() != 2)
        throw DimensionError("GRU input weight shape " + shape_string(w->shape));
    for (const Tensor* u : {&u_z, &u_r, &u_h})
      if (u->rows() != h || u->cols() != h || u->rank() != 2)
        throw DimensionError("GRU recurrent weight shape " + shape_string(u->shape));
    for (const Tensor* b : {&b_z, &b_r, &b_h})
      if (b->size() != h) throw DimensionError("GRU bias shape " + shape_string(b->shape));
  }

  std::vector<NamedTensor> named(const std::string& prefix) {
    return {{prefix + ".w_z", &w_z}, {prefix + ".w_r", &w_r}, {prefix + ".w_h", &w_h},
            {prefix + ".u_z", &u_z}, {prefix + ".u_r", &u_r}, {prefix + ".u_h", &u_h},
            {prefix + ".b_z", &b_z}, {prefix + ".b_r", &b_r}, {prefix + ".b_h", &b_h}};
  }
};

/// GRU parameters recorded on a tape, with the transposed weights the
/// row-vector formulation multiplies by.
struct GruVars {
  Var w_z_t, w_r_t, w_h_t;
  Var u_z_t, u_r_t, u_h_t;
  Var b_z, b_r, b_h;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;

  static GruVars bind(Tape& tape, GruParams& p) {
    p.validate();
    GruVars v;
    v.w_z_t = transpose(tape.parameter(p.w_z));
    v.w_r_t = transpose(tape.parameter(p.w_r));
    v.w_h_t = transpose(tape.parameter(p.w_h));
    v.u_z_t = transpose(tape.parameter(p.u_z));
    v.u_r_t = transpose(tape.parameter(p.u_r));
    v.u_h_t = transpose(tape.parameter(p.u_h));
    v.b_z = tape.parameter(p.b_z);
    v.b_r = tape.parameter(p.b_r);
    v.b_h = tape.parameter(p.b_h);
    v.input_dim = p.input_dim();
    v.hidden_dim = p.hidden_dim();
    return v;
  }
};

namespace detail {

/// One recurrence step given precomputed input projections x·Wᵀ + b.
inline Var gru_update(Var xz, Var xr, Var xh, Var h_prev, const GruVars& p) {
  Var z = sigmoid(add(xz, matmul(h_prev, p.u_z_t)));
  Var r = sigmoid(add(xr, matmul(h_prev, p.u_r_t)));
  Var candidate = tanh(add(xh, matmul(mul(r, h_prev), p.u_h_t)));
  return add(mul(one_minus(z), h_prev), mul(z, candidate));
}

struct Projections {
  Var z, r, h;
};

inline Projections project_inputs(Var x, const GruVars& p) {
  if (x.value().cols() != p.input_dim) {
    throw DimensionError("GRU input width " + std::to_string(x.value().cols()) + " vs expected " +
                         std::to_string(p.input_dim));
  }
  return {add_row(matmul(x, p.w_z_t), p.b_z), add_row(matmul(x, p.w_r_t), p.b_r),
          add_row(matmul(x, p.w_h_t), p.b_h)};
}

}  // namespace detail

/// h_t = (1 - z) ⊙ h_prev + z ⊙ tanh(W_h x + U_h (r ⊙ h_prev) + b_h)
inline Var gru_cell(Var x, Var h_prev, const GruVars& p) {
  if (h_prev.value().rows() != 1 || h_prev.value().cols() != p.hidden_dim) {
    throw DimensionError("GRU state shape " + shape_string(h_prev.value().shape) +
                         " vs hidden " + std::to_string(p.hidden_dim));
  }
  if (x.value().rows() != 1) throw DimensionError("gru_cell expects a single input row");
  auto proj = detail::project_inputs(x, p);
  return detail::gru_update(proj.z, proj.r, proj.h, h_prev, p);
}

// ---- embedding --------------------------------------------------------------

inline Var embed_lookup(Var embedding, std::span<const std::size_t> ids) {
  return gather_rows(embedding, ids);
}

// ---- bi-directional encoder ---------------------------------------------------

/// Per-position concatenated forward/backward states. Padding rows are zero.
struct EncodedSequence {
  Var states;  // [len x 2*hidden]
  std::vector<bool> mask;
};

namespace detail {

inline Var run_direction(Tape& tape, Var embedded, const GruVars& p, const std::vector<bool>& mask,
                         bool reverse) {
  const std::size_t len = mask.size();
  auto proj = project_inputs(embedded, p);
  Var zero_row = tape.constant(Tensor({1, p.hidden_dim}));
  Var h = zero_row;
  std::vector<Var> rows(len, zero_row);
  for (std::size_t step = 0; step < len; ++step) {
    const std::size_t t = reverse ? len - 1 - step : step;
    if (!mask[t]) continue;  // padding: state passes through, output row stays zero
    h = gru_update(row(proj.z, t), row(proj.r, t), row(proj.h, t), h, p);
    rows[t] = h;
  }
  return stack_rows(rows);
}

}  // namespace detail

inline EncodedSequence bigru_encode(Var embedded, const GruVars& fwd, const GruVars& bwd,
                                    const std::vector<bool>& mask) {
  const std::size_t len = embedded.value().rows();
  if (mask.empty() || len == 0) throw UsageError("bigru_encode: empty sequence");
  if (mask.size() != len) {
    throw DimensionError("bigru_encode: mask length " + std::to_string(mask.size()) +
                         " vs sequence length " + std::to_string(len));
  }
  if (std::none_of(mask.begin(), mask.end(), [](bool m) { return m; })) {
    throw UsageError("bigru_encode: every position is masked");
  }
  if (fwd.hidden_dim != bwd.hidden_dim) throw DimensionError("bigru_encode: hidden sizes differ");
  Tape& tape = embedded.tape();
  Var forward_states = detail::run_direction(tape, embedded, fwd, mask, false);
  Var backward_states = detail::run_direction(tape, embedded, bwd, mask, true);
  return {concat_cols(forward_states, backward_states), mask};
}

// ---- dropout ------------------------------------------------------------------

/// Inverted dropout: survivors are scaled by 1/(1 - rate) at training time so
/// evaluation is the identity.
inline Var dropout(Var x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  Tensor keep(detail::as_matrix(x.value()).shape);
  const double scale_up = 1.0 / (1.0 - rate);
  for (double& k : keep.data) k = rng.bernoulli(rate) ? 0.0 : scale_up;
  return mul_const(x, std::move(keep));
}

}  // namespace casreader
