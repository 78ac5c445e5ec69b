#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "casreader/error.hpp"
#include "casreader/rng.hpp"
#include "casreader/sample.hpp"

namespace casreader {

/// Copy-task corpus. Every document hides one answer noun `occurrences`
/// times, each copy right after a marker token; markers appear nowhere else.
/// One document in `tie_every` also holds a distractor noun whose visible
/// count equals the answer's and whose first copy comes earlier, which
/// defeats a most-frequent-noun guess. Filler words do not repeat inside a
/// document while the filler pool lasts.
struct SynthConfig {
  std::size_t vocab_size = 50;
  std::size_t train_docs = 200;
  std::size_t valid_docs = 50;
  std::size_t test_docs = 50;
  std::size_t sentences = 6;
  std::size_t sentence_length = 6;
  std::size_t occurrences = 3;
  std::size_t tie_every = 4;  // 0 disables distractor documents
  std::size_t extra_nouns = 2;
  std::uint64_t seed = 1;

  std::size_t doc_length() const { return sentences * sentence_length; }

  std::size_t marker_count() const { return std::max<std::size_t>(2, vocab_size / 12); }
  std::size_t noun_count() const { return std::max<std::size_t>(4, vocab_size / 4); }
  std::size_t filler_count() const { return vocab_size - marker_count() - noun_count(); }

  void validate() const {
    if (vocab_size < 20) throw ConfigError("synthetic vocabulary must have at least 20 words");
    if (doc_length() < 10) throw ConfigError("synthetic documents need at least 10 tokens");
    if (sentence_length < 3) throw ConfigError("sentences need at least 3 tokens");
    if (occurrences < 2) throw ConfigError("the answer must occur at least twice");
    if (occurrences + 1 > sentences) throw ConfigError("need one answer-free sentence per document plus one per answer copy");
    if (occurrences > marker_count()) throw ConfigError("not enough distinct markers for the answer copies");
    if (train_docs == 0 || valid_docs == 0 || test_docs == 0) throw ConfigError("every split needs documents");
    const std::size_t fixed = 2 * occurrences + (occurrences - 1) + extra_nouns;
    if (fixed > doc_length()) throw ConfigError("documents too short for the requested content");
    if (extra_nouns + 2 > noun_count()) throw ConfigError("not enough nouns for the requested extras");
  }
};

struct SynthCorpus {
  std::vector<ClozeSample> train, valid, test;
};

inline std::string synth_marker(std::size_t i) { return "m" + std::to_string(i); }
inline std::string synth_noun(std::size_t i) { return "n" + std::to_string(i); }
inline std::string synth_filler(std::size_t i) { return "w" + std::to_string(i); }

namespace detail {

inline ClozeSample synth_document(const SynthConfig& c, std::size_t index, Rng& rng) {
  const std::size_t S = c.sentences, L = c.sentence_length;
  std::vector<std::vector<std::string>> grid(S, std::vector<std::string>(L));
  auto free_at = [&](std::size_t s, std::size_t p) { return grid[s][p].empty(); };

  std::vector<std::size_t> nouns(c.noun_count());
  std::iota(nouns.begin(), nouns.end(), std::size_t{0});
  rng.shuffle(nouns);
  const std::string answer = synth_noun(nouns[0]);
  const std::string distractor = synth_noun(nouns[1]);
  const bool tie = c.tie_every > 0 && index % c.tie_every == c.tie_every - 1;

  // Answer copies go in distinct sentences after the first, each behind its own marker.
  std::vector<std::size_t> sentences(S - 1);
  std::iota(sentences.begin(), sentences.end(), std::size_t{1});
  rng.shuffle(sentences);
  std::vector<std::size_t> markers(c.marker_count());
  std::iota(markers.begin(), markers.end(), std::size_t{0});
  rng.shuffle(markers);
  std::vector<std::pair<std::size_t, std::size_t>> answer_slots;
  for (std::size_t k = 0; k < c.occurrences; ++k) {
    const std::size_t s = sentences[k];
    const std::size_t p = 1 + rng.index(L - 1);
    grid[s][p - 1] = synth_marker(markers[k]);
    grid[s][p] = answer;
    answer_slots.emplace_back(s, p);
  }

  auto place = [&](const std::string& token, bool first_sentence) {
    std::vector<std::pair<std::size_t, std::size_t>> open;
    for (std::size_t s = 0; s < S; ++s) {
      if (first_sentence && s != 0) continue;
      for (std::size_t p = 0; p < L; ++p)
        if (free_at(s, p)) open.emplace_back(s, p);
    }
    if (open.empty()) throw ConfigError("synthetic document too small");
    const auto [s, p] = open[rng.index(open.size())];
    grid[s][p] = token;
  };

  // Visible answer copies after blanking: occurrences - 1.
  const std::size_t distractor_copies = tie ? c.occurrences - 1 : 1;
  place(distractor, true);
  for (std::size_t k = 1; k < distractor_copies; ++k) place(distractor, false);
  for (std::size_t e = 0; e < c.extra_nouns; ++e) place(synth_noun(nouns[2 + e]), false);

  std::vector<std::size_t> fillers;
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t p = 0; p < L; ++p) {
      if (!free_at(s, p)) continue;
      if (fillers.empty()) {
        fillers.resize(c.filler_count());
        std::iota(fillers.begin(), fillers.end(), std::size_t{0});
        rng.shuffle(fillers);
      }
      grid[s][p] = synth_filler(fillers.back());
      fillers.pop_back();
    }

  const auto [qs, qp] = answer_slots[rng.index(answer_slots.size())];
  ClozeSample sample;
  sample.answer = answer;
  sample.query = grid[qs];
  sample.query[qp] = std::string(kPlaceholder);
  grid[qs][qp] = std::string(kPlaceholder);
  std::vector<std::string> candidates;
  for (const auto& sentence : grid)
    for (const auto& t : sentence) {
      sample.document.push_back(t);
      if (t.size() > 1 && t[0] == 'n' && std::find(candidates.begin(), candidates.end(), t) == candidates.end()) {
        candidates.push_back(t);
      }
    }
  sample.candidates = candidates;
  sample.meta = {"synth-" + std::to_string(index), qs, qp};
  return sample;
}

}  // namespace detail

/// Deterministic in the config (seed included); splits are disjoint by document.
inline SynthCorpus generate_synthetic_corpus(const SynthConfig& config) {
  config.validate();
  Rng rng(derive_seed(config.seed, "synth"));
  SynthCorpus corpus;
  const std::size_t total = config.train_docs + config.valid_docs + config.test_docs;
  for (std::size_t i = 0; i < total; ++i) {
    ClozeSample s = detail::synth_document(config, i, rng);
    if (i < config.train_docs) {
      corpus.train.push_back(std::move(s));
    } else if (i < config.train_docs + config.valid_docs) {
      corpus.valid.push_back(std::move(s));
    } else {
      corpus.test.push_back(std::move(s));
    }
  }
  return corpus;
}

}  // namespace casreader
