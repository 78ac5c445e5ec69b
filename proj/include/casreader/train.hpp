#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "casreader/error.hpp"
#include "casreader/nn.hpp"
#include "casreader/reader.hpp"
#include "casreader/rng.hpp"
#include "casreader/sample.hpp"
#include "casreader/tensor.hpp"
#include "casreader/vocab.hpp"

namespace casreader {

// ---- batching -------------------------------------------------------------------

/// Right-padded id matrices for one mini-batch. Masks are true exactly at
/// real tokens; padding uses the pad id.
struct Batch {
  std::size_t size = 0;
  std::size_t doc_len = 0;
  std::size_t query_len = 0;
  std::vector<TokenId> doc_ids;  // [size x doc_len]
  std::vector<bool> doc_mask;
  std::vector<TokenId> query_ids;  // [size x query_len]
  std::vector<bool> query_mask;
  std::vector<TokenId> answer_ids;
  std::vector<std::string> sample_ids;

  std::span<const TokenId> doc_row(std::size_t b) const {
    return std::span<const TokenId>(doc_ids).subspan(b * doc_len, doc_len);
  }

  SampleView view(std::size_t b) const {
    SampleView v;
    v.document = doc_row(b);
    v.doc_mask.assign(doc_mask.begin() + static_cast<std::ptrdiff_t>(b * doc_len),
                      doc_mask.begin() + static_cast<std::ptrdiff_t>((b + 1) * doc_len));
    v.query = std::span<const TokenId>(query_ids).subspan(b * query_len, query_len);
    v.query_mask.assign(query_mask.begin() + static_cast<std::ptrdiff_t>(b * query_len),
                        query_mask.begin() + static_cast<std::ptrdiff_t>((b + 1) * query_len));
    return v;
  }

  /// Flat positions in row b whose token is the answer.
  std::vector<std::size_t> answer_positions(std::size_t b) const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < doc_len; ++j)
      if (doc_mask[b * doc_len + j] && doc_ids[b * doc_len + j] == answer_ids[b]) out.push_back(j);
    return out;
  }
};

inline Batch pad_batch(std::span<const EncodedSample* const> rows) {
  Batch batch;
  batch.size = rows.size();
  for (const auto* s : rows) {
    batch.doc_len = std::max(batch.doc_len, s->document.size());
    batch.query_len = std::max(batch.query_len, s->query.size());
  }
  batch.doc_ids.assign(batch.size * batch.doc_len, kPadId);
  batch.doc_mask.assign(batch.size * batch.doc_len, false);
  batch.query_ids.assign(batch.size * batch.query_len, kPadId);
  batch.query_mask.assign(batch.size * batch.query_len, false);
  for (std::size_t b = 0; b < rows.size(); ++b) {
    const EncodedSample& s = *rows[b];
    for (std::size_t j = 0; j < s.document.size(); ++j) {
      batch.doc_ids[b * batch.doc_len + j] = s.document[j];
      batch.doc_mask[b * batch.doc_len + j] = true;
    }
    for (std::size_t j = 0; j < s.query.size(); ++j) {
      batch.query_ids[b * batch.query_len + j] = s.query[j];
      batch.query_mask[b * batch.query_len + j] = true;
    }
    batch.answer_ids.push_back(s.answer);
    batch.sample_ids.push_back(s.id);
  }
  return batch;
}

/// Shuffles with `rng` and cuts into batches of `batch_size` (last may be
/// short). Samples whose answer id is missing from the document are rejected.
inline std::vector<Batch> make_batches(std::span<const EncodedSample> samples, std::size_t batch_size,
                                       Rng& rng) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.document.empty() || s.query.empty()) {
      throw ValidationError("sample '" + s.id + "' (#" + std::to_string(i) + ") is empty");
    }
    if (std::find(s.document.begin(), s.document.end(), s.answer) == s.document.end()) {
      throw ValidationError("sample '" + s.id + "' (#" + std::to_string(i) +
                            ") has an answer id absent from its document");
    }
  }
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    std::vector<const EncodedSample*> rows;
    for (std::size_t k = start; k < std::min(order.size(), start + batch_size); ++k)
      rows.push_back(&samples[order[k]]);
    batches.push_back(pad_batch(rows));
  }
  return batches;
}

inline std::vector<AttentionMap> forward_batch(ModelParams& params, const Batch& batch, ReaderMode mode,
                                               bool training = false, Rng* rng = nullptr) {
  std::vector<AttentionMap> out;
  out.reserve(batch.size);
  for (std::size_t b = 0; b < batch.size; ++b) {
    Tape tape;
    BoundModel model = BoundModel::bind(tape, params);
    out.push_back(to_attention_map(build_sample_graph(model, batch.view(b), mode, training, rng),
                                   batch.doc_row(b)));
  }
  return out;
}

// ---- objective and optimizer ------------------------------------------------------

/// -(1/B) sum_b log P(answer_b | D_b, Q_b)
inline double nll_loss(std::span<const WordProbs> word_probs, std::span<const TokenId> answers) {
  if (word_probs.size() != answers.size() || answers.empty()) {
    throw UsageError("nll_loss: need one answer per distribution");
  }
  double total = 0.0;
  for (std::size_t b = 0; b < answers.size(); ++b) {
    const auto it = word_probs[b].find(answers[b]);
    if (it == word_probs[b].end()) {
      throw ContractError("nll_loss: answer id " + std::to_string(answers[b]) +
                          " is not a document word of sample " + std::to_string(b));
    }
    total += std::log(it->second);
  }
  return -total / static_cast<double>(answers.size());
}

/// Rescales every gradient by threshold/g when the global L2 norm g exceeds
/// the threshold. Returns the norm before clipping.
inline double clip_gradients(std::span<const NamedTensor> params, double threshold) {
  if (!(threshold > 0.0)) throw ConfigError("clip threshold must be positive");
  double squared = 0.0;
  for (const auto& p : params) {
    for (double g : p.tensor->grad) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
      squared += g * g;
    }
  }
  const double norm = std::sqrt(squared);
  if (norm > threshold) {
    const double factor = threshold / norm;
    for (const auto& p : params)
      for (double& g : p.tensor->grad) g *= factor;
  }
  return norm;
}

struct AdamState {
  double lr = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t t = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  static AdamState init(std::span<const NamedTensor> params, double lr) {
    AdamState s;
    s.lr = lr;
    for (const auto& p : params) {
      s.m.emplace_back(p.tensor->shape);
      s.v.emplace_back(p.tensor->shape);
    }
    return s;
  }

  bool operator==(const AdamState& o) const {
    return lr == o.lr && beta1 == o.beta1 && beta2 == o.beta2 && epsilon == o.epsilon && t == o.t &&
           m == o.m && v == o.v;
  }
};

/// Bias-corrected Adam: theta -= lr * m_hat / (sqrt(v_hat) + epsilon).
inline void adam_step(std::span<const NamedTensor> params, AdamState& state) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                         " tensors, got " + std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor& p = *params[k].tensor;
    if (state.m[k].shape != p.shape || state.v[k].shape != p.shape || p.grad.size() != p.size()) {
      throw DimensionError("adam_step: shape mismatch for '" + params[k].name + "'");
    }
  }
  ++state.t;
  const double correction1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double correction2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k].tensor;
    auto& m = state.m[k].data;
    auto& v = state.v[k].data;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p.data[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

// ---- configuration ------------------------------------------------------------------

struct TrainConfig {
  double lr = 0.0005;
  std::size_t batch_size = 32;
  double clip_threshold = 10.0;
  std::size_t epochs = 10;
  std::size_t patience = 0;  // 0 disables early stopping
  double dropout_rate = 0.0;
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 16;
  ReaderMode mode = ReaderMode::avg;
  std::uint64_t seed = 1;
  std::optional<std::size_t> shortlist_size;  // unbounded when empty

  /// Small dimensions used by the tests and the synthetic corpus.
  static TrainConfig desk() { return {}; }

  /// News-domain dimensions: 256 embedding and hidden units, dropout 0.1 on
  /// GRU outputs, 100K shortlist.
  static TrainConfig people_daily() {
    TrainConfig c;
    c.embed_dim = 256;
    c.hidden_dim = 256;
    c.dropout_rate = 0.1;
    c.shortlist_size = 100000;
    return c;
  }

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(clip_threshold > 0.0)) throw ConfigError("clip_threshold must be positive");
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (embed_dim == 0 || hidden_dim == 0) throw ConfigError("embed_dim and hidden_dim must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
    if (shortlist_size && *shortlist_size == 0) throw ConfigError("shortlist_size must be positive");
  }

  ModelConfig model_config(std::size_t vocab_size) const {
    return {vocab_size, embed_dim, hidden_dim, dropout_rate, mode};
  }

  bool operator==(const TrainConfig&) const = default;
};

// ---- training loop ------------------------------------------------------------------

/// Fraction of samples whose predicted word equals the gold answer, with
/// dropout disabled.
inline double accuracy(ModelParams& params, std::span<const EncodedSample> samples, ReaderMode mode) {
  if (samples.empty()) throw UsageError("accuracy over an empty sample set");
  std::size_t correct = 0;
  for (const auto& s : samples)
    if (!s.answer_missing && predict(params, s, mode) == s.answer) ++correct;
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

/// One forward/backward/clip/Adam update on a batch. Returns the batch loss
/// measured before the update.
inline double train_step(ModelParams& params, const Batch& batch, AdamState& adam,
                         const TrainConfig& config, Rng& dropout_rng) {
  auto named = params.named();
  for (auto& nt : named) nt.tensor->enable_grad();
  Tape tape;
  BoundModel model = BoundModel::bind(tape, params);
  Var total;
  for (std::size_t b = 0; b < batch.size; ++b) {
    SampleGraph graph = build_sample_graph(model, batch.view(b), config.mode, true, &dropout_rng);
    const auto positions = batch.answer_positions(b);
    if (positions.empty()) {
      throw ContractError("answer of sample '" + batch.sample_ids[b] + "' is not in its document");
    }
    Var log_p = log(select_sum(graph.merged, positions));
    total = total.valid() ? add(total, log_p) : log_p;
  }
  Var loss = scale(total, -1.0 / static_cast<double>(batch.size));
  const double value = loss.value().data[0];
  if (!std::isfinite(value)) throw NumericError("non-finite training loss");
  tape.backward(loss);
  clip_gradients(named, config.clip_threshold);
  adam_step(named, adam);
  return value;
}

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
  double valid_accuracy = 0.0;
  double wall_time_s = 0.0;
};

struct TrainResult {
  ModelParams best;
  AdamState best_adam;
  std::size_t best_epoch = 0;
  double best_valid_accuracy = -1.0;
  std::vector<EpochLog> log;
  std::size_t excluded_samples = 0;
  bool diverged = false;
  std::string divergence_reason;
};

/// Shuffle, batch, forward, NLL, backward, clip and Adam for each epoch; the
/// parameters with the best validation accuracy (earliest on ties) are kept.
/// A non-finite loss stops training and returns the best epoch so far.
inline TrainResult train(const TrainConfig& config, std::size_t vocab_size,
                         std::span<const EncodedSample> train_set, std::span<const EncodedSample> valid_set,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  config.validate();
  if (train_set.empty()) throw UsageError("empty training set");
  if (valid_set.empty()) throw UsageError("empty validation set");

  std::vector<EncodedSample> usable;
  TrainResult result;
  for (const auto& s : train_set) {
    if (s.answer_missing) {
      ++result.excluded_samples;
    } else {
      usable.push_back(s);
    }
  }
  if (usable.empty()) throw UsageError("no usable training samples");

  Rng init_rng(derive_seed(config.seed, "init"));
  Rng shuffle_rng(derive_seed(config.seed, "shuffle"));
  Rng dropout_rng(derive_seed(config.seed, "dropout"));
  ModelParams params = ModelParams::init(config.model_config(vocab_size), init_rng);
  AdamState adam = AdamState::init(params.named(), config.lr);
  result.best = params;
  result.best_adam = adam;

  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    double weighted_loss = 0.0;
    try {
      for (const Batch& batch : make_batches(usable, config.batch_size, shuffle_rng)) {
        weighted_loss += train_step(params, batch, adam, config, dropout_rng) * static_cast<double>(batch.size);
      }
    } catch (const NumericError& e) {
      result.diverged = true;
      result.divergence_reason = e.what();
      break;
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.mean_loss = weighted_loss / static_cast<double>(usable.size());
    entry.train_accuracy = accuracy(params, usable, config.mode);
    entry.valid_accuracy = accuracy(params, valid_set, config.mode);
    entry.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);

    if (entry.valid_accuracy > result.best_valid_accuracy) {
      result.best_valid_accuracy = entry.valid_accuracy;
      result.best_epoch = epoch;
      result.best = params;
      result.best_adam = adam;
      since_best = 0;
    } else if (config.patience > 0 && ++since_best >= config.patience) {
      break;
    }
  }
  for (Tensor* t : result.best.tensors()) {
    t->grad.clear();
    t->requires_grad = false;
  }
  return result;
}

// ---- checkpoints ------------------------------------------------------------------------
//
// A checkpoint is a directory:
//   manifest.txt  versioned text: hyperparameters, optimizer scalars, and one
//                 "tensor <name> <dims...>" line per parameter in order
//   params.bin    little-endian float64 arrays in manifest order
//   adam_m.bin, adam_v.bin   optimizer moments, same layout
//   vocab.txt     the vocabulary the embedding rows index (optional)

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;
  AdamState adam;
  TrainConfig config;
  std::optional<Vocabulary> vocab;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline double parse_double(const std::string& text, const std::string& key) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw CorruptionError("manifest: bad number '" + text + "' for " + key);
  }
  return v;
}

inline std::uint64_t parse_u64(const std::string& text, const std::string& key) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw CorruptionError("manifest: bad integer '" + text + "' for " + key);
  }
  return v;
}

inline void write_f64(std::ostream& out, const std::vector<double>& values) {
  std::string bytes(values.size() * 8, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline void write_arrays(const std::filesystem::path& path, const std::vector<const Tensor*>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  for (const Tensor* t : tensors) write_f64(out, t->data);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void read_arrays(const std::filesystem::path& path, const std::vector<std::string>& names,
                        const std::vector<Tensor*>& tensors) {
  const std::string bytes = read_file(path);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    Tensor& t = *tensors[k];
    const std::size_t need = t.size() * 8;
    if (offset + need > bytes.size()) {
      throw CorruptionError(path.filename().string() + ": truncated data for parameter '" + names[k] + "'");
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + i * 8 + b])) << (8 * b);
      t.data[i] = std::bit_cast<double>(bits);
    }
    offset += need;
  }
  if (offset != bytes.size()) {
    throw CorruptionError(path.filename().string() + ": " + std::to_string(bytes.size() - offset) +
                          " trailing bytes after the last parameter");
  }
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& dir, ModelParams& params, const AdamState& adam,
                            const TrainConfig& config, const Vocabulary* vocab = nullptr) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory '" + dir.string() + "'");
  const auto named = params.named();
  if (adam.m.size() != named.size() || adam.v.size() != named.size()) {
    throw DimensionError("optimizer state does not match the parameter list");
  }
  if (vocab && vocab->size() != params.config.vocab_size) {
    throw ConfigError("vocabulary size " + std::to_string(vocab->size()) + " vs embedding rows " +
                      std::to_string(params.config.vocab_size));
  }

  std::ostringstream m;
  m << "casreader-checkpoint " << kCheckpointVersion << '\n';
  m << "config.lr " << detail::format_double(config.lr) << '\n';
  m << "config.batch_size " << config.batch_size << '\n';
  m << "config.clip_threshold " << detail::format_double(config.clip_threshold) << '\n';
  m << "config.epochs " << config.epochs << '\n';
  m << "config.patience " << config.patience << '\n';
  m << "config.seed " << config.seed << '\n';
  m << "config.shortlist_size " << (config.shortlist_size ? std::to_string(*config.shortlist_size) : "unbounded")
    << '\n';
  m << "model.vocab_size " << params.config.vocab_size << '\n';
  m << "model.embed_dim " << params.config.embed_dim << '\n';
  m << "model.hidden_dim " << params.config.hidden_dim << '\n';
  m << "model.dropout_rate " << detail::format_double(params.config.dropout_rate) << '\n';
  m << "model.mode " << to_string(params.config.mode) << '\n';
  m << "adam.t " << adam.t << '\n';
  m << "adam.lr " << detail::format_double(adam.lr) << '\n';
  m << "adam.beta1 " << detail::format_double(adam.beta1) << '\n';
  m << "adam.beta2 " << detail::format_double(adam.beta2) << '\n';
  m << "adam.epsilon " << detail::format_double(adam.epsilon) << '\n';
  m << "vocab " << (vocab ? "vocab.txt" : "none") << '\n';
  std::vector<const Tensor*> values, moments1, moments2;
  for (std::size_t k = 0; k < named.size(); ++k) {
    m << "tensor " << named[k].name;
    for (std::size_t d : named[k].tensor->shape) m << ' ' << d;
    m << '\n';
    values.push_back(named[k].tensor);
    moments1.push_back(&adam.m[k]);
    moments2.push_back(&adam.v[k]);
  }
  {
    std::ofstream out(dir / "manifest.txt", std::ios::binary);
    if (!out) throw IoError("cannot write manifest in '" + dir.string() + "'");
    out << m.str();
  }
  detail::write_arrays(dir / "params.bin", values);
  detail::write_arrays(dir / "adam_m.bin", moments1);
  detail::write_arrays(dir / "adam_v.bin", moments2);
  if (vocab) save_vocab(*vocab, (dir / "vocab.txt").string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::istringstream in(detail::read_file(dir / "manifest.txt"));
  std::string line;
  if (!std::getline(in, line)) throw CorruptionError("manifest: empty");
  if (line != "casreader-checkpoint " + std::to_string(kCheckpointVersion)) {
    throw CorruptionError("manifest: unsupported header '" + line + "'");
  }
  std::map<std::string, std::string> fields;
  std::vector<std::pair<std::string, Shape>> tensors;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key.empty()) continue;
    if (key == "tensor") {
      std::string name;
      ls >> name;
      Shape shape;
      std::size_t d = 0;
      while (ls >> d) shape.push_back(d);
      tensors.emplace_back(name, shape);
    } else {
      std::string value;
      ls >> value;
      fields[key] = value;
    }
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = fields.find(key);
    if (it == fields.end()) throw CorruptionError("manifest: missing field '" + key + "'");
    return it->second;
  };

  Checkpoint ck;
  TrainConfig& c = ck.config;
  c.lr = detail::parse_double(get("config.lr"), "config.lr");
  c.batch_size = detail::parse_u64(get("config.batch_size"), "config.batch_size");
  c.clip_threshold = detail::parse_double(get("config.clip_threshold"), "config.clip_threshold");
  c.epochs = detail::parse_u64(get("config.epochs"), "config.epochs");
  c.patience = detail::parse_u64(get("config.patience"), "config.patience");
  c.seed = detail::parse_u64(get("config.seed"), "config.seed");
  if (get("config.shortlist_size") != "unbounded") {
    c.shortlist_size = detail::parse_u64(get("config.shortlist_size"), "config.shortlist_size");
  }
  ModelConfig mc;
  mc.vocab_size = detail::parse_u64(get("model.vocab_size"), "model.vocab_size");
  mc.embed_dim = detail::parse_u64(get("model.embed_dim"), "model.embed_dim");
  mc.hidden_dim = detail::parse_u64(get("model.hidden_dim"), "model.hidden_dim");
  mc.dropout_rate = detail::parse_double(get("model.dropout_rate"), "model.dropout_rate");
  mc.mode = parse_reader_mode(get("model.mode"));
  c.embed_dim = mc.embed_dim;
  c.hidden_dim = mc.hidden_dim;
  c.dropout_rate = mc.dropout_rate;
  c.mode = mc.mode;

  // Shapes come from the config; the manifest must agree with them.
  ck.params.config = mc;
  ck.params.embedding = Tensor({mc.vocab_size, mc.embed_dim});
  for (auto* g : {&ck.params.doc_fwd, &ck.params.doc_bwd, &ck.params.query_fwd, &ck.params.query_bwd}) {
    *g = GruParams::zeros(mc.embed_dim, mc.hidden_dim);
  }
  auto named = ck.params.named();
  if (tensors.size() != named.size()) {
    throw CorruptionError("manifest lists " + std::to_string(tensors.size()) + " tensors, expected " +
                          std::to_string(named.size()));
  }
  std::vector<std::string> names;
  std::vector<Tensor*> targets;
  for (std::size_t k = 0; k < named.size(); ++k) {
    if (tensors[k].first != named[k].name || tensors[k].second != named[k].tensor->shape) {
      throw CorruptionError("manifest entry " + std::to_string(k) + " ('" + tensors[k].first + "' " +
                            shape_string(tensors[k].second) + ") does not match expected '" + named[k].name +
                            "' " + shape_string(named[k].tensor->shape));
    }
    names.push_back(named[k].name);
    targets.push_back(named[k].tensor);
  }
  detail::read_arrays(dir / "params.bin", names, targets);

  ck.adam = AdamState::init(named, detail::parse_double(get("adam.lr"), "adam.lr"));
  ck.adam.t = detail::parse_u64(get("adam.t"), "adam.t");
  ck.adam.beta1 = detail::parse_double(get("adam.beta1"), "adam.beta1");
  ck.adam.beta2 = detail::parse_double(get("adam.beta2"), "adam.beta2");
  ck.adam.epsilon = detail::parse_double(get("adam.epsilon"), "adam.epsilon");
  std::vector<Tensor*> m_targets, v_targets;
  for (std::size_t k = 0; k < named.size(); ++k) {
    m_targets.push_back(&ck.adam.m[k]);
    v_targets.push_back(&ck.adam.v[k]);
  }
  detail::read_arrays(dir / "adam_m.bin", names, m_targets);
  detail::read_arrays(dir / "adam_v.bin", names, v_targets);

  if (get("vocab") != "none") {
    ck.vocab = load_vocab((dir / get("vocab")).string());
    if (ck.vocab->size() != mc.vocab_size) {
      throw ConfigError("checkpoint vocabulary has " + std::to_string(ck.vocab->size()) +
                        " entries but the embedding has " + std::to_string(mc.vocab_size) + " rows");
    }
  }
  return ck;
}

}  // namespace casreader
