#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "casreader/error.hpp"
#include "casreader/rng.hpp"
#include "casreader/sample.hpp"

namespace casreader {

struct TaggedToken {
  std::string token;
  std::string tag;

  bool operator==(const TaggedToken&) const = default;
};

using TaggedSentence = std::vector<TaggedToken>;

struct TaggedDocument {
  std::string doc_id;
  std::vector<TaggedSentence> sentences;

  bool operator==(const TaggedDocument&) const = default;
};

/// Tag-set membership test; the default table covers the common noun tags
/// of the LTP, Penn and Universal tag sets.
class NounPredicate {
 public:
  NounPredicate() : tags_{"n", "NN", "NNS", "NOUN"} {}
  explicit NounPredicate(std::set<std::string> tags) : tags_(std::move(tags)) {}

  bool operator()(std::string_view tag) const { return tags_.count(std::string(tag)) > 0; }
  const std::set<std::string>& tags() const { return tags_; }

 private:
  std::set<std::string> tags_;
};

// ---- tagged corpus format -----------------------------------------------------
//
//   #doc <id>
//   <token>\t<TAG>
//   ...
//   <blank line between sentences>

inline std::vector<TaggedDocument> parse_tagged_corpus(std::istream& in) {
  std::vector<TaggedDocument> docs;
  std::string line;
  std::size_t line_no = 0;
  auto close_sentence = [&] {
    if (!docs.empty() && !docs.back().sentences.empty() && docs.back().sentences.back().empty()) {
      docs.back().sentences.pop_back();
    }
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("#doc", 0) == 0) {
      close_sentence();
      std::string id = line.size() > 4 ? line.substr(4) : "";
      id.erase(0, id.find_first_not_of(" \t"));
      if (id.empty()) throw ParseError("line " + std::to_string(line_no) + ": document header without an id");
      docs.push_back({id, {{}}});
      continue;
    }
    if (line.find_first_not_of(" \t") == std::string::npos) {
      close_sentence();
      if (!docs.empty()) docs.back().sentences.emplace_back();
      continue;
    }
    if (docs.empty()) throw ParseError("line " + std::to_string(line_no) + ": token before any '#doc' header");
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size() ||
        line.find('\t', tab + 1) != std::string::npos) {
      throw ParseError("line " + std::to_string(line_no) + ": expected token<TAB>TAG");
    }
    docs.back().sentences.back().push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  close_sentence();
  return docs;
}

inline std::vector<TaggedDocument> load_tagged_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open tagged corpus '" + path + "'");
  return parse_tagged_corpus(in);
}

inline void write_tagged_corpus(std::ostream& out, const std::vector<TaggedDocument>& docs) {
  for (const auto& doc : docs) {
    out << "#doc " << doc.doc_id << '\n';
    for (std::size_t s = 0; s < doc.sentences.size(); ++s) {
      if (s > 0) out << '\n';
      for (const auto& t : doc.sentences[s]) out << t.token << '\t' << t.tag << '\n';
    }
    out << '\n';
  }
}

// ---- candidates ---------------------------------------------------------------

struct Occurrence {
  std::size_t sentence = 0;
  std::size_t position = 0;

  bool operator==(const Occurrence&) const = default;
  auto operator<=>(const Occurrence&) const = default;
};

/// Nouns with at least two noun-tagged occurrences, each listed with those
/// occurrences in document order.
inline std::map<std::string, std::vector<Occurrence>> candidate_answers(const TaggedDocument& doc,
                                                                       const NounPredicate& is_noun = {}) {
  std::map<std::string, std::vector<Occurrence>> noun_occurrences;
  for (std::size_t s = 0; s < doc.sentences.size(); ++s)
    for (std::size_t p = 0; p < doc.sentences[s].size(); ++p) {
      const TaggedToken& t = doc.sentences[s][p];
      if (is_noun(t.tag) && t.token != kPlaceholder) noun_occurrences[t.token].push_back({s, p});
    }
  std::erase_if(noun_occurrences, [](const auto& kv) { return kv.second.size() < 2; });
  return noun_occurrences;
}

// ---- generation ---------------------------------------------------------------

struct DatagenConfig {
  std::size_t samples_per_doc = 1;
  NounPredicate is_noun;
};

struct SkipRecord {
  std::string doc_id;
  std::string reason;
};

namespace detail {

inline std::vector<std::string> surface(const TaggedSentence& sentence) {
  std::vector<std::string> out;
  out.reserve(sentence.size());
  for (const auto& t : sentence) out.push_back(t.token);
  return out;
}

/// Occurrences that can be blanked: the query sentence must not keep another
/// copy of the answer.
inline std::vector<Occurrence> blankable(const TaggedDocument& doc, const std::string& answer,
                                         const std::vector<Occurrence>& occurrences) {
  std::vector<Occurrence> out;
  for (const Occurrence& o : occurrences) {
    const auto& sentence = doc.sentences[o.sentence];
    const auto copies = std::count_if(sentence.begin(), sentence.end(),
                                      [&](const TaggedToken& t) { return t.token == answer; });
    if (copies == 1) out.push_back(o);
  }
  return out;
}

}  // namespace detail

/// Why `doc` yields no samples, or an empty string when it does.
inline std::string skip_reason(const TaggedDocument& doc, const NounPredicate& is_noun = {}) {
  if (doc.sentences.empty()) return "document has no sentences";
  for (const auto& s : doc.sentences)
    if (s.empty()) return "document has an empty sentence";
  for (const auto& s : doc.sentences)
    for (const auto& t : s)
      if (t.token == kPlaceholder) return "document contains the placeholder token";
  const auto candidates = candidate_answers(doc, is_noun);
  if (candidates.empty()) return "no noun occurs at least twice";
  for (const auto& [answer, occ] : candidates)
    if (!detail::blankable(doc, answer, occ).empty()) return "";
  return "every candidate occurrence shares its sentence with another copy of the answer";
}

/// Draws up to `samples_per_doc` distinct (answer, occurrence) pairs: the
/// answer uniformly among candidates with unused occurrences, then the
/// occurrence uniformly among that answer's unused ones.
inline std::vector<ClozeSample> generate_samples(const TaggedDocument& doc, Rng& rng,
                                                 const DatagenConfig& config = {}) {
  if (config.samples_per_doc == 0) throw ConfigError("samples_per_doc must be at least 1");
  if (!skip_reason(doc, config.is_noun).empty()) return {};

  std::vector<std::pair<std::string, std::vector<Occurrence>>> pool;
  for (const auto& [answer, occ] : candidate_answers(doc, config.is_noun)) {
    auto usable = detail::blankable(doc, answer, occ);
    if (!usable.empty()) pool.emplace_back(answer, std::move(usable));
  }

  std::vector<ClozeSample> out;
  while (out.size() < config.samples_per_doc && !pool.empty()) {
    const std::size_t a = rng.index(pool.size());
    auto& [answer, occurrences] = pool[a];
    const std::size_t k = rng.index(occurrences.size());
    const Occurrence o = occurrences[k];
    occurrences.erase(occurrences.begin() + static_cast<std::ptrdiff_t>(k));

    ClozeSample sample;
    sample.answer = answer;
    sample.query = detail::surface(doc.sentences[o.sentence]);
    sample.query[o.position] = std::string(kPlaceholder);
    for (std::size_t s = 0; s < doc.sentences.size(); ++s) {
      const auto words = s == o.sentence ? sample.query : detail::surface(doc.sentences[s]);
      sample.document.insert(sample.document.end(), words.begin(), words.end());
    }
    sample.meta = {doc.doc_id, o.sentence, o.position};
    out.push_back(std::move(sample));
    if (occurrences.empty()) pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(a));
  }
  return out;
}

struct GenerationResult {
  std::vector<ClozeSample> samples;
  std::vector<SkipRecord> skipped;
};

/// Each document uses its own stream seeded from (seed, doc_id), so output
/// for one document does not depend on the others.
inline GenerationResult generate_corpus(const std::vector<TaggedDocument>& docs, std::uint64_t seed,
                                        const DatagenConfig& config = {}) {
  if (config.samples_per_doc == 0) throw ConfigError("samples_per_doc must be at least 1");
  GenerationResult result;
  for (const auto& doc : docs) {
    const std::string reason = skip_reason(doc, config.is_noun);
    if (!reason.empty()) {
      result.skipped.push_back({doc.doc_id, reason});
      continue;
    }
    Rng rng(derive_seed(seed, doc.doc_id));
    auto samples = generate_samples(doc, rng, config);
    result.samples.insert(result.samples.end(), std::make_move_iterator(samples.begin()),
                          std::make_move_iterator(samples.end()));
  }
  return result;
}

// ---- statistics ---------------------------------------------------------------

struct DatasetStats {
  std::size_t queries = 0;
  std::size_t max_doc_tokens = 0;
  std::size_t avg_doc_tokens = 0;
  std::size_t max_query_tokens = 0;
  std::size_t avg_query_tokens = 0;
  std::size_t vocabulary = 0;

  bool operator==(const DatasetStats&) const = default;
};

/// Table-style corpus summary. Averages are rounded to the nearest integer;
/// the vocabulary counts distinct document and query tokens other than the
/// placeholder.
inline DatasetStats dataset_stats(const std::vector<ClozeSample>& samples) {
  if (samples.empty()) throw UsageError("statistics of an empty dataset");
  DatasetStats st;
  st.queries = samples.size();
  double doc_total = 0.0, query_total = 0.0;
  std::set<std::string> words;
  for (const auto& s : samples) {
    st.max_doc_tokens = std::max(st.max_doc_tokens, s.document.size());
    st.max_query_tokens = std::max(st.max_query_tokens, s.query.size());
    doc_total += static_cast<double>(s.document.size());
    query_total += static_cast<double>(s.query.size());
    for (const auto& t : s.document)
      if (t != kPlaceholder) words.insert(t);
    for (const auto& t : s.query)
      if (t != kPlaceholder) words.insert(t);
  }
  const double n = static_cast<double>(samples.size());
  st.avg_doc_tokens = static_cast<std::size_t>(std::lround(doc_total / n));
  st.avg_query_tokens = static_cast<std::size_t>(std::lround(query_total / n));
  st.vocabulary = words.size();
  return st;
}

}  // namespace casreader
