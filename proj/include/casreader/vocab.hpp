#pragma once

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "casreader/error.hpp"
#include "casreader/rng.hpp"
#include "casreader/sample.hpp"

namespace casreader {

/// Frequency-ranked token table. Ids 0..11 are reserved: pad, placeholder and
/// ten out-of-vocabulary buckets; shortlisted tokens follow in descending
/// frequency order.
class Vocabulary {
 public:
  static constexpr TokenId kPadId = casreader::kPadId;
  static constexpr TokenId kPlaceholderId = casreader::kPlaceholderId;
  static constexpr TokenId kFirstUnkId = 2;
  static constexpr std::size_t kUnkBuckets = 10;
  static constexpr std::size_t kReserved = 12;
  static constexpr int kFormatVersion = 1;

  Vocabulary() : Vocabulary(std::nullopt) {}

  explicit Vocabulary(std::optional<std::size_t> shortlist_size) : shortlist_size_(shortlist_size) {
    id_to_token_.emplace_back("<pad>");
    id_to_token_.emplace_back(kPlaceholder);
    for (std::size_t k = 0; k < kUnkBuckets; ++k) id_to_token_.push_back("<unk" + std::to_string(k) + ">");
    frequencies_.assign(kReserved, 0);
  }

  std::size_t size() const { return id_to_token_.size(); }
  std::optional<std::size_t> shortlist_size() const { return shortlist_size_; }

  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
      throw IndexError("token id " + std::to_string(id) + " out of range");
    }
    return id_to_token_[static_cast<std::size_t>(id)];
  }

  std::size_t frequency(TokenId id) const { return frequencies_.at(static_cast<std::size_t>(id)); }

  bool contains(std::string_view token) const {
    return token_to_id_.find(std::string(token)) != token_to_id_.end();
  }

  /// Total mapping: shortlisted tokens get their id, the placeholder its
  /// reserved id, and anything else the bucket FNV-1a-64(token) mod 10.
  TokenId id(std::string_view token) const {
    if (token == kPlaceholder) return kPlaceholderId;
    if (auto it = token_to_id_.find(std::string(token)); it != token_to_id_.end()) return it->second;
    return unk_id(token);
  }

  static TokenId unk_id(std::string_view token) {
    return kFirstUnkId + static_cast<TokenId>(fnv1a64(token) % kUnkBuckets);
  }

  static bool is_reserved(TokenId id) { return id >= 0 && static_cast<std::size_t>(id) < kReserved; }

  /// Appends a shortlisted token; used by build and load.
  TokenId add(std::string token, std::size_t frequency) {
    if (token == kPlaceholder) throw ValidationError("the placeholder token is reserved");
    if (token.empty() || token.find_first_of("\t\n\r") != std::string::npos) {
      throw ValidationError("token '" + token + "' is empty or contains tab/newline");
    }
    if (shortlist_size_ && size() - kReserved >= *shortlist_size_) {
      throw ValidationError("vocabulary exceeds shortlist size " + std::to_string(*shortlist_size_));
    }
    const auto next = static_cast<TokenId>(id_to_token_.size());
    auto [it, inserted] = token_to_id_.emplace(token, next);
    if (!inserted) throw ValidationError("duplicate token '" + token + "'");
    id_to_token_.push_back(std::move(token));
    frequencies_.push_back(frequency);
    return next;
  }

  bool operator==(const Vocabulary& other) const {
    return shortlist_size_ == other.shortlist_size_ && id_to_token_ == other.id_to_token_ &&
           frequencies_ == other.frequencies_;
  }

 private:
  std::optional<std::size_t> shortlist_size_;
  std::vector<std::string> id_to_token_;
  std::vector<std::size_t> frequencies_;
  std::unordered_map<std::string, TokenId> token_to_id_;
};

/// Keeps the `shortlist_size` most frequent tokens (all of them when
/// unbounded); ties are broken by byte-wise token order. The placeholder is
/// never counted.
inline Vocabulary build_vocab(const std::vector<std::string>& tokens,
                              std::optional<std::size_t> shortlist_size) {
  if (shortlist_size && *shortlist_size == 0) throw UsageError("shortlist size must be at least 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& t : tokens)
    if (t != kPlaceholder) ++counts[t];
  if (counts.empty()) throw UsageError("cannot build a vocabulary from an empty token stream");

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  // counts is already in lexicographic order, so a stable sort on frequency
  // keeps the tie-break.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (shortlist_size && ranked.size() > *shortlist_size) ranked.resize(*shortlist_size);

  Vocabulary vocab(shortlist_size);
  for (auto& [token, freq] : ranked) vocab.add(std::move(token), freq);
  return vocab;
}

inline Vocabulary build_vocab(const std::vector<ClozeSample>& samples,
                              std::optional<std::size_t> shortlist_size) {
  std::vector<std::string> tokens;
  for (const auto& s : samples) {
    tokens.insert(tokens.end(), s.document.begin(), s.document.end());
    tokens.insert(tokens.end(), s.query.begin(), s.query.end());
  }
  return build_vocab(tokens, shortlist_size);
}

inline EncodedSample encode_sample(const Vocabulary& vocab, const ClozeSample& sample,
                                   std::string id = {}) {
  EncodedSample out;
  out.id = id.empty() ? sample.meta.doc_id : std::move(id);
  out.document.reserve(sample.document.size());
  for (const auto& t : sample.document) out.document.push_back(vocab.id(t));
  out.query.reserve(sample.query.size());
  for (const auto& t : sample.query) out.query.push_back(vocab.id(t));
  out.answer = vocab.id(sample.answer);
  if (sample.candidates) {
    for (const auto& c : *sample.candidates) out.candidates.push_back(vocab.id(c));
  }
  out.answer_missing =
      std::find(out.document.begin(), out.document.end(), out.answer) == out.document.end();
  return out;
}

// ---- persistence --------------------------------------------------------------
//
// Line 1:   casreader-vocab<TAB><version><TAB><shortlist size | "unbounded">
// Line 2..: <token><TAB><frequency>, one per non-reserved id in id order.

inline void save_vocab(const Vocabulary& vocab, std::ostream& out) {
  out << "casreader-vocab\t" << Vocabulary::kFormatVersion << '\t';
  if (vocab.shortlist_size()) {
    out << *vocab.shortlist_size();
  } else {
    out << "unbounded";
  }
  out << '\n';
  for (std::size_t id = Vocabulary::kReserved; id < vocab.size(); ++id) {
    const auto tid = static_cast<TokenId>(id);
    out << vocab.token(tid) << '\t' << vocab.frequency(tid) << '\n';
  }
}

inline void save_vocab(const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  save_vocab(vocab, out);
  if (!out) throw IoError("failed writing '" + path + "'");
}

namespace detail {

inline std::size_t parse_count(std::string_view text, std::size_t line, const char* what) {
  std::size_t value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ParseError("line " + std::to_string(line) + ": invalid " + what + " '" +
                     std::string(text) + "'");
  }
  return value;
}

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return fields;
}

}  // namespace detail

inline Vocabulary load_vocab(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("line 1: missing vocabulary header");
  const auto header = detail::split_tabs(line);
  if (header.size() != 3 || header[0] != "casreader-vocab") {
    throw ParseError("line 1: malformed vocabulary header");
  }
  const std::size_t version = detail::parse_count(header[1], 1, "format version");
  if (version != static_cast<std::size_t>(Vocabulary::kFormatVersion)) {
    throw ParseError("line 1: unsupported vocabulary format version " + std::to_string(version) +
                     " (expected " + std::to_string(Vocabulary::kFormatVersion) + ")");
  }
  std::optional<std::size_t> shortlist;
  if (header[2] != "unbounded") shortlist = detail::parse_count(header[2], 1, "shortlist size");

  Vocabulary vocab(shortlist);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = detail::split_tabs(line);
    if (fields.size() != 2 || fields[0].empty()) {
      throw ParseError("line " + std::to_string(line_no) + ": expected token<TAB>frequency");
    }
    const std::string token(fields[0]);
    const std::size_t freq = detail::parse_count(fields[1], line_no, "frequency");
    if (vocab.contains(token) || token == kPlaceholder) {
      throw ParseError("line " + std::to_string(line_no) + ": duplicate token '" + token + "'");
    }
    try {
      vocab.add(token, freq);
    } catch (const ValidationError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return vocab;
}

inline Vocabulary load_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open vocabulary '" + path + "'");
  return load_vocab(in);
}

}  // namespace casreader
