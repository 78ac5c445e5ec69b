#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "casreader/dataset.hpp"
#include "casreader/datagen.hpp"
#include "casreader/error.hpp"
#include "casreader/reader.hpp"
#include "casreader/sample.hpp"
#include "casreader/train.hpp"
#include "casreader/vocab.hpp"

namespace casreader {

struct EvalRecord {
  std::string id;
  std::string predicted;
  std::string gold;
  std::size_t gold_rank = 0;  // 1-based position of gold in word_probs; 0 when absent
  std::vector<std::pair<std::string, double>> top;

  bool operator==(const EvalRecord&) const = default;
};

struct EvalReport {
  std::string dataset;
  std::string mode;
  std::size_t total = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  std::optional<std::vector<EvalRecord>> records;

  bool operator==(const EvalReport&) const = default;
};

struct EvalOptions {
  ReaderMode mode = ReaderMode::avg;
  bool restrict_candidates = false;
  bool keep_records = false;
  std::size_t top_k = 5;
  std::string dataset_name;
  std::ostream* attention_dump = nullptr;
};

/// Word distribution for one encoded sample.
using Scorer = std::function<WordProbs(const EncodedSample&)>;

/// Gold words ranked by descending probability, smallest id first on ties.
inline std::vector<std::pair<TokenId, double>> ranked(const WordProbs& probs) {
  std::vector<std::pair<TokenId, double>> out(probs.begin(), probs.end());
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

inline Json attention_record(const std::string& id, const AttentionMap& map, const Vocabulary& vocab) {
  Json j;
  j["id"] = id;
  Json alpha = Json::array();
  for (std::size_t t = 0; t < map.alpha.rows(); ++t) {
    Json row = Json::array();
    for (std::size_t c = 0; c < map.alpha.cols(); ++c) row.push_back(map.alpha.at(t, c));
    alpha.push_back(std::move(row));
  }
  j["alpha"] = std::move(alpha);
  j["merged"] = map.merged.data;
  Json words = Json::array();
  for (const auto& [w, p] : map.word_probs) words.push_back({{"id", w}, {"token", vocab.token(w)}, {"p", p}});
  j["word_probs"] = std::move(words);
  return j;
}

/// Accuracy of any scorer; prediction is the argmax word (smallest id on ties).
inline EvalReport evaluate_with(const Scorer& scorer, const Vocabulary& vocab,
                                const std::vector<EncodedSample>& samples, const EvalOptions& options) {
  if (samples.empty()) throw UsageError("cannot evaluate an empty dataset");
  EvalReport report;
  report.dataset = options.dataset_name;
  report.mode = std::string(to_string(options.mode));
  report.total = samples.size();
  if (options.keep_records) report.records.emplace();
  for (const auto& s : samples) {
    const WordProbs probs = scorer(s);
    const TokenId predicted =
        predict(probs, options.restrict_candidates ? std::span<const TokenId>(s.candidates) : std::span<const TokenId>());
    if (predicted == s.answer && !s.answer_missing) ++report.correct;
    if (report.records) {
      EvalRecord r;
      r.id = s.id;
      r.predicted = vocab.token(predicted);
      r.gold = vocab.token(s.answer);
      const auto order = ranked(probs);
      for (std::size_t k = 0; k < order.size(); ++k) {
        if (order[k].first == s.answer) r.gold_rank = k + 1;
        if (k < options.top_k) r.top.emplace_back(vocab.token(order[k].first), order[k].second);
      }
      report.records->push_back(std::move(r));
    }
  }
  report.accuracy = static_cast<double>(report.correct) / static_cast<double>(report.total);
  return report;
}

/// Model accuracy with dropout off; the vocabulary must be the one the
/// embedding rows were built from.
inline EvalReport evaluate(ModelParams& params, const Vocabulary& vocab, const std::vector<EncodedSample>& samples,
                           const EvalOptions& options) {
  if (vocab.size() != params.config.vocab_size) {
    throw ConfigError("vocabulary has " + std::to_string(vocab.size()) + " entries but the model embeds " +
                      std::to_string(params.config.vocab_size));
  }
  Scorer scorer = [&](const EncodedSample& s) {
    AttentionMap map = forward(params, s, options.mode);
    if (options.attention_dump) *options.attention_dump << attention_record(s.id, map, vocab).dump() << '\n';
    return map.word_probs;
  };
  return evaluate_with(scorer, vocab, samples, options);
}

/// Predicts the candidate (or, without candidates, any document word) that
/// occurs most often in the document; earlier first occurrence wins ties.
inline std::string frequency_baseline(const ClozeSample& s) {
  std::map<std::string, std::size_t> counts;
  std::map<std::string, std::size_t> first;
  for (std::size_t i = 0; i < s.document.size(); ++i) {
    const auto& t = s.document[i];
    if (t == kPlaceholder) continue;
    ++counts[t];
    first.emplace(t, i);
  }
  std::vector<std::string> pool;
  if (s.candidates) {
    for (const auto& c : *s.candidates)
      if (counts.count(c)) pool.push_back(c);
  }
  if (pool.empty())
    for (const auto& [t, n] : counts) pool.push_back(t);
  if (pool.empty()) throw UsageError("frequency baseline on a document with no words");
  return *std::min_element(pool.begin(), pool.end(), [&](const std::string& a, const std::string& b) {
    if (counts[a] != counts[b]) return counts[a] > counts[b];
    return first[a] < first[b];
  });
}

inline double frequency_baseline_accuracy(const std::vector<ClozeSample>& samples) {
  if (samples.empty()) throw UsageError("cannot evaluate an empty dataset");
  std::size_t correct = 0;
  for (const auto& s : samples)
    if (frequency_baseline(s) == s.answer) ++correct;
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

// ---- JSON views ---------------------------------------------------------------------

inline Json to_json(const EvalReport& r) {
  Json j;
  j["dataset"] = r.dataset;
  j["mode"] = r.mode;
  j["total"] = r.total;
  j["correct"] = r.correct;
  j["accuracy"] = r.accuracy;
  if (r.records) {
    Json records = Json::array();
    for (const auto& rec : *r.records) {
      Json top = Json::array();
      for (const auto& [t, p] : rec.top) top.push_back({{"token", t}, {"p", p}});
      records.push_back({{"id", rec.id},
                         {"predicted", rec.predicted},
                         {"gold", rec.gold},
                         {"gold_rank", rec.gold_rank},
                         {"top", std::move(top)}});
    }
    j["records"] = std::move(records);
  }
  return j;
}

inline Json to_json(const DatasetStats& s) {
  Json j;
  j["queries"] = s.queries;
  j["max_doc_tokens"] = s.max_doc_tokens;
  j["avg_doc_tokens"] = s.avg_doc_tokens;
  j["max_query_tokens"] = s.max_query_tokens;
  j["avg_query_tokens"] = s.avg_query_tokens;
  j["vocabulary"] = s.vocabulary;
  return j;
}

inline DatasetStats stats_from_json(const Json& j) {
  try {
    DatasetStats s;
    s.queries = j.at("queries").get<std::size_t>();
    s.max_doc_tokens = j.at("max_doc_tokens").get<std::size_t>();
    s.avg_doc_tokens = j.at("avg_doc_tokens").get<std::size_t>();
    s.max_query_tokens = j.at("max_query_tokens").get<std::size_t>();
    s.avg_query_tokens = j.at("avg_query_tokens").get<std::size_t>();
    s.vocabulary = j.at("vocabulary").get<std::size_t>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed statistics: ") + e.what());
  }
}

/// Log line for one epoch, without wall time.
inline Json to_json(const EpochLog& e) {
  Json j;
  j["epoch"] = e.epoch;
  j["mean_loss"] = e.mean_loss;
  j["train_accuracy"] = e.train_accuracy;
  j["valid_accuracy"] = e.valid_accuracy;
  return j;
}

/// Reads a training configuration. An optional "preset" ("desk" or
/// "people-daily") supplies defaults; other keys override it. Unknown keys
/// are rejected.
inline TrainConfig train_config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("training configuration must be a JSON object");
  TrainConfig c;
  if (j.contains("preset")) {
    const auto preset = j["preset"].is_string() ? j["preset"].get<std::string>() : "";
    if (preset == "desk") {
      c = TrainConfig::desk();
    } else if (preset == "people-daily") {
      c = TrainConfig::people_daily();
    } else {
      throw ConfigError("unknown preset '" + j["preset"].dump() + "'");
    }
  }
  auto count = [&](const std::string& key, const Json& v) {
    if (!v.is_number_unsigned()) throw ConfigError("'" + key + "' must be a non-negative integer");
    return v.get<std::uint64_t>();
  };
  auto real = [&](const std::string& key, const Json& v) {
    if (!v.is_number()) throw ConfigError("'" + key + "' must be a number");
    return v.get<double>();
  };
  for (const auto& [key, v] : j.items()) {
    if (key == "preset") continue;
    if (key == "lr") {
      c.lr = real(key, v);
    } else if (key == "batch_size") {
      c.batch_size = count(key, v);
    } else if (key == "clip_threshold") {
      c.clip_threshold = real(key, v);
    } else if (key == "epochs") {
      c.epochs = count(key, v);
    } else if (key == "patience") {
      c.patience = count(key, v);
    } else if (key == "dropout_rate") {
      c.dropout_rate = real(key, v);
    } else if (key == "embed_dim") {
      c.embed_dim = count(key, v);
    } else if (key == "hidden_dim") {
      c.hidden_dim = count(key, v);
    } else if (key == "mode") {
      if (!v.is_string()) throw ConfigError("'mode' must be a string");
      c.mode = parse_reader_mode(v.get<std::string>());
    } else if (key == "seed") {
      c.seed = count(key, v);
    } else if (key == "shortlist_size") {
      if (v.is_null() || (v.is_string() && v.get<std::string>() == "unbounded")) {
        c.shortlist_size.reset();
      } else {
        c.shortlist_size = count(key, v);
      }
    } else {
      throw ConfigError("unknown configuration key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

inline Json to_json(const TrainConfig& c) {
  Json j;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["clip_threshold"] = c.clip_threshold;
  j["epochs"] = c.epochs;
  j["patience"] = c.patience;
  j["dropout_rate"] = c.dropout_rate;
  j["embed_dim"] = c.embed_dim;
  j["hidden_dim"] = c.hidden_dim;
  j["mode"] = std::string(to_string(c.mode));
  j["seed"] = c.seed;
  if (c.shortlist_size) {
    j["shortlist_size"] = *c.shortlist_size;
  } else {
    j["shortlist_size"] = nullptr;
  }
  return j;
}

}  // namespace casreader
