#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "casreader/error.hpp"
#include "casreader/nn.hpp"
#include "casreader/rng.hpp"
#include "casreader/sample.hpp"
#include "casreader/tensor.hpp"

namespace casreader {

/// Consensus heuristic combining the per-query-step attentions.
enum class MergeMode { sum, avg, max };

/// How a model scores document positions: CAS with one of the merge modes,
/// or the single-attention AS Reader baseline.
enum class ReaderMode { sum, avg, max, as_baseline };

inline std::string_view to_string(ReaderMode mode) {
  switch (mode) {
    case ReaderMode::sum: return "sum";
    case ReaderMode::avg: return "avg";
    case ReaderMode::max: return "max";
    case ReaderMode::as_baseline: return "as-baseline";
  }
  return "?";
}

inline ReaderMode parse_reader_mode(std::string_view text) {
  if (text == "sum") return ReaderMode::sum;
  if (text == "avg") return ReaderMode::avg;
  if (text == "max") return ReaderMode::max;
  if (text == "as-baseline") return ReaderMode::as_baseline;
  throw ConfigError("unknown mode '" + std::string(text) + "' (expected sum, avg, max or as-baseline)");
}

inline MergeMode merge_mode_of(ReaderMode mode) {
  switch (mode) {
    case ReaderMode::sum: return MergeMode::sum;
    case ReaderMode::avg: return MergeMode::avg;
    case ReaderMode::max: return MergeMode::max;
    case ReaderMode::as_baseline: break;
  }
  throw UsageError("the AS baseline has no merge mode");
}

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 16;
  double dropout_rate = 0.0;
  ReaderMode mode = ReaderMode::avg;

  bool operator==(const ModelConfig&) const = default;
};

/// Shared embedding plus separate bi-GRUs for document and query.
struct ModelParams {
  ModelConfig config;
  Tensor embedding;  // [vocab x embed]
  GruParams doc_fwd, doc_bwd, query_fwd, query_bwd;

  static ModelParams init(const ModelConfig& config, Rng& rng) {
    if (config.vocab_size == 0 || config.embed_dim == 0 || config.hidden_dim == 0) {
      throw ConfigError("model dimensions must be positive");
    }
    if (!(config.dropout_rate >= 0.0 && config.dropout_rate < 1.0)) {
      throw ConfigError("dropout rate must lie in [0, 1)");
    }
    ModelParams p;
    p.config = config;
    p.embedding = uniform_init(config.vocab_size, config.embed_dim, 0.1, rng);
    p.doc_fwd = GruParams::init(config.embed_dim, config.hidden_dim, rng);
    p.doc_bwd = GruParams::init(config.embed_dim, config.hidden_dim, rng);
    p.query_fwd = GruParams::init(config.embed_dim, config.hidden_dim, rng);
    p.query_bwd = GruParams::init(config.embed_dim, config.hidden_dim, rng);
    return p;
  }

  /// Every trainable tensor in a fixed order; checkpoints use this order.
  std::vector<NamedTensor> named() {
    std::vector<NamedTensor> out{{"embedding", &embedding}};
    for (auto* part : {&doc_fwd, &doc_bwd, &query_fwd, &query_bwd}) {
      const char* prefix = part == &doc_fwd   ? "doc_fwd"
                           : part == &doc_bwd ? "doc_bwd"
                           : part == &query_fwd ? "query_fwd"
                                                : "query_bwd";
      for (auto& nt : part->named(prefix)) out.push_back(nt);
    }
    return out;
  }

  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out;
    for (auto& nt : named()) out.push_back(nt.tensor);
    return out;
  }

  void zero_grad() {
    for (Tensor* t : tensors()) t->enable_grad();
  }
};

/// ModelParams recorded on one tape.
struct BoundModel {
  Var embedding;
  GruVars doc_fwd, doc_bwd, query_fwd, query_bwd;
  const ModelConfig* config = nullptr;

  static BoundModel bind(Tape& tape, ModelParams& p) {
    if (p.embedding.rows() != p.config.vocab_size || p.embedding.cols() != p.config.embed_dim) {
      throw DimensionError("embedding shape " + shape_string(p.embedding.shape) +
                           " disagrees with the model config");
    }
    BoundModel b;
    b.embedding = tape.parameter(p.embedding);
    b.doc_fwd = GruVars::bind(tape, p.doc_fwd);
    b.doc_bwd = GruVars::bind(tape, p.doc_bwd);
    b.query_fwd = GruVars::bind(tape, p.query_fwd);
    b.query_bwd = GruVars::bind(tape, p.query_bwd);
    for (const auto* g : {&b.doc_fwd, &b.doc_bwd, &b.query_fwd, &b.query_bwd}) {
      if (g->hidden_dim != p.config.hidden_dim || g->input_dim != p.config.embed_dim) {
        throw DimensionError("GRU dimensions disagree with the model config");
      }
    }
    b.config = &p.config;
    return b;
  }
};

// ---- attention head ----------------------------------------------------------

/// Row t is the masked softmax over document positions of <h_doc[j], h_query[t]>.
inline Var attention_per_step(Var h_doc, Var h_query, const std::vector<bool>& doc_mask) {
  const Tensor& d = h_doc.value();
  const Tensor& q = h_query.value();
  if (d.cols() != q.cols()) {
    throw DimensionError("attention: document width " + std::to_string(d.cols()) +
                         " vs query width " + std::to_string(q.cols()));
  }
  return masked_softmax(matmul(h_query, transpose(h_doc)), doc_mask);
}

/// s = softmax(f(alpha)) with f the column sum, mean or maximum.
inline Var merge_attention(Var alpha, MergeMode mode, const std::vector<bool>& doc_mask) {
  const Tensor& a = alpha.value();
  const std::size_t m = a.rows();
  if (m == 0) throw UsageError("merge_attention: no query steps");
  Var combined;
  switch (mode) {
    case MergeMode::sum:
      combined = sum_rows(alpha);
      break;
    case MergeMode::avg:
      combined = scale(sum_rows(alpha), 1.0 / static_cast<double>(m));
      break;
    case MergeMode::max:
      combined = row(alpha, 0);
      for (std::size_t t = 1; t < m; ++t) combined = max(combined, row(alpha, t));
      break;
  }
  return masked_softmax(combined, doc_mask);
}

/// Final-state query vector for the AS Reader: last forward state and the
/// backward state at the first position, over unmasked positions.
inline Var as_query_vector(const EncodedSequence& query) {
  const auto first = std::find(query.mask.begin(), query.mask.end(), true);
  const auto last = std::find(query.mask.rbegin(), query.mask.rend(), true);
  if (first == query.mask.end()) throw UsageError("query has no unmasked position");
  const std::size_t width = query.states.value().cols();
  const std::size_t hidden = width / 2;
  const auto first_index = static_cast<std::size_t>(first - query.mask.begin());
  const auto last_index = query.mask.size() - 1 - static_cast<std::size_t>(last - query.mask.rbegin());
  Var forward_part = slice_cols(row(query.states, last_index), 0, hidden);
  Var backward_part = slice_cols(row(query.states, first_index), hidden, width);
  return concat_cols(forward_part, backward_part);
}

/// Single softmax over <h_doc[j], query_final>; no consensus step.
inline Var as_reader_attention(Var h_doc, Var query_final, const std::vector<bool>& doc_mask) {
  const Tensor& d = h_doc.value();
  const Tensor& q = query_final.value();
  if (q.rows() != 1 || d.cols() != q.cols()) {
    throw DimensionError("AS attention: document width " + std::to_string(d.cols()) +
                         " vs query vector " + shape_string(q.shape));
  }
  return masked_softmax(matmul(query_final, transpose(h_doc)), doc_mask);
}

using WordProbs = std::map<TokenId, double>;

/// P(w) = sum of merged attention over the unmasked positions holding w,
/// accumulated left to right.
inline WordProbs attention_sum(std::span<const double> merged, std::span<const TokenId> doc_ids,
                               const std::vector<bool>& doc_mask = {}) {
  if (merged.size() != doc_ids.size()) {
    throw DimensionError("attention_sum: " + std::to_string(merged.size()) + " weights for " +
                         std::to_string(doc_ids.size()) + " tokens");
  }
  if (!doc_mask.empty() && doc_mask.size() != doc_ids.size()) {
    throw DimensionError("attention_sum: mask length differs from document length");
  }
  WordProbs out;
  for (std::size_t i = 0; i < doc_ids.size(); ++i) {
    if (!doc_mask.empty() && !doc_mask[i]) continue;
    out[doc_ids[i]] += merged[i];
  }
  return out;
}

/// Highest-probability word, smallest id on ties. When `restrict_to` is
/// non-empty and overlaps the keys, only those words are considered.
inline TokenId predict(const WordProbs& probs, std::span<const TokenId> restrict_to = {}) {
  if (probs.empty()) throw UsageError("predict: empty word distribution");
  auto allowed = [&](TokenId id) {
    return restrict_to.empty() || std::find(restrict_to.begin(), restrict_to.end(), id) != restrict_to.end();
  };
  const bool any_allowed = std::any_of(probs.begin(), probs.end(), [&](const auto& kv) { return allowed(kv.first); });
  std::optional<std::pair<TokenId, double>> best;
  for (const auto& [id, p] : probs) {
    if (any_allowed && !allowed(id)) continue;
    if (!best || p > best->second) best = {id, p};
  }
  return best->first;
}

// ---- full forward -------------------------------------------------------------

struct AttentionMap {
  Tensor alpha;   // [m x n]; for the AS baseline the single attention row
  Tensor merged;  // [1 x n]
  WordProbs word_probs;
};

/// Tape-level result for one sample.
struct SampleGraph {
  Var alpha;
  Var merged;
  std::vector<bool> doc_mask;
};

struct SampleView {
  std::span<const TokenId> document;
  std::vector<bool> doc_mask;
  std::span<const TokenId> query;
  std::vector<bool> query_mask;
};

namespace detail {

inline std::vector<std::size_t> to_indices(std::span<const TokenId> ids, std::size_t vocab_size) {
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      throw IndexError("token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(vocab_size));
    }
    out.push_back(static_cast<std::size_t>(id));
  }
  return out;
}

}  // namespace detail

/// Records the whole reader for one (possibly padded) sample on the tape.
inline SampleGraph build_sample_graph(const BoundModel& model, const SampleView& sample,
                                      ReaderMode mode, bool training, Rng* rng) {
  const ModelConfig& cfg = *model.config;
  if (sample.document.empty() || sample.query.empty()) throw UsageError("empty document or query");
  std::size_t holes = 0;
  for (std::size_t i = 0; i < sample.query.size(); ++i)
    if (sample.query_mask[i] && sample.query[i] == kPlaceholderId) ++holes;
  if (holes != 1) {
    throw ValidationError("query must contain exactly one placeholder id, found " + std::to_string(holes));
  }
  const bool apply_dropout = training && cfg.dropout_rate > 0.0;
  if (apply_dropout && rng == nullptr) throw UsageError("training with dropout needs an Rng");

  const auto doc_idx = detail::to_indices(sample.document, cfg.vocab_size);
  const auto query_idx = detail::to_indices(sample.query, cfg.vocab_size);
  EncodedSequence doc = bigru_encode(embed_lookup(model.embedding, doc_idx), model.doc_fwd,
                                     model.doc_bwd, sample.doc_mask);
  EncodedSequence query = bigru_encode(embed_lookup(model.embedding, query_idx), model.query_fwd,
                                       model.query_bwd, sample.query_mask);
  if (apply_dropout) {
    doc.states = dropout(doc.states, cfg.dropout_rate, true, *rng);
    query.states = dropout(query.states, cfg.dropout_rate, true, *rng);
  }

  SampleGraph graph;
  graph.doc_mask = sample.doc_mask;
  if (mode == ReaderMode::as_baseline) {
    graph.merged = as_reader_attention(doc.states, as_query_vector(query), sample.doc_mask);
    graph.alpha = graph.merged;
    return graph;
  }

  Var query_rows = query.states;
  if (std::find(sample.query_mask.begin(), sample.query_mask.end(), false) != sample.query_mask.end()) {
    std::vector<std::size_t> live;
    for (std::size_t t = 0; t < sample.query_mask.size(); ++t)
      if (sample.query_mask[t]) live.push_back(t);
    query_rows = gather_rows(query.states, live);
  }
  graph.alpha = attention_per_step(doc.states, query_rows, sample.doc_mask);
  graph.merged = merge_attention(graph.alpha, merge_mode_of(mode), sample.doc_mask);
  return graph;
}

inline AttentionMap to_attention_map(const SampleGraph& graph, std::span<const TokenId> doc_ids) {
  AttentionMap out;
  out.alpha = graph.alpha.value();
  out.merged = graph.merged.value();
  out.word_probs = attention_sum(out.merged.data, doc_ids, graph.doc_mask);
  return out;
}

inline AttentionMap forward(ModelParams& params, const EncodedSample& sample, ReaderMode mode,
                            bool training = false, Rng* rng = nullptr) {
  Tape tape;
  BoundModel model = BoundModel::bind(tape, params);
  SampleView view{sample.document, std::vector<bool>(sample.document.size(), true), sample.query,
                  std::vector<bool>(sample.query.size(), true)};
  return to_attention_map(build_sample_graph(model, view, mode, training, rng), sample.document);
}

inline std::vector<AttentionMap> forward(ModelParams& params, std::span<const EncodedSample> samples,
                                         ReaderMode mode, bool training = false, Rng* rng = nullptr) {
  std::vector<AttentionMap> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(forward(params, s, mode, training, rng));
  return out;
}

inline TokenId predict(ModelParams& params, const EncodedSample& sample, ReaderMode mode,
                       bool restrict_candidates = false) {
  const AttentionMap map = forward(params, sample, mode);
  return predict(map.word_probs, restrict_candidates ? std::span<const TokenId>(sample.candidates)
                                                     : std::span<const TokenId>());
}

}  // namespace casreader
