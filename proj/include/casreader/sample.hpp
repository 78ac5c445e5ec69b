#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "casreader/error.hpp"

namespace casreader {

/// Marks the deleted word in a query (UTF-8 for U+27E8 X U+27E9).
inline constexpr std::string_view kPlaceholder = "\xE2\x9F\xA8X\xE2\x9F\xA9";

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kPlaceholderId = 1;

struct SampleMeta {
  std::string doc_id;
  std::optional<std::size_t> sentence_index;
  std::optional<std::size_t> token_index;  // answer position inside the query sentence

  bool operator==(const SampleMeta&) const = default;
};

/// One <document, query, answer> triple in surface form.
struct ClozeSample {
  std::vector<std::string> document;
  std::vector<std::string> query;
  std::string answer;
  std::optional<std::vector<std::string>> candidates;
  SampleMeta meta;

  bool operator==(const ClozeSample&) const = default;
};

/// A ClozeSample mapped through a vocabulary.
struct EncodedSample {
  std::string id;
  std::vector<TokenId> document;
  std::vector<TokenId> query;
  TokenId answer = 0;
  std::vector<TokenId> candidates;  // empty when the source had none
  bool answer_missing = false;      // answer id absent from the encoded document
};

inline std::size_t count_token(const std::vector<std::string>& tokens, std::string_view token) {
  return static_cast<std::size_t>(std::count(tokens.begin(), tokens.end(), token));
}

/// Throws ValidationError describing the first broken invariant.
inline void validate_sample(const ClozeSample& s) {
  if (s.document.empty()) throw ValidationError("document is empty");
  if (s.query.empty()) throw ValidationError("query is empty");
  if (s.answer.empty()) throw ValidationError("answer is empty");
  if (s.answer == kPlaceholder) throw ValidationError("answer is the placeholder token");
  const std::size_t holes = count_token(s.query, kPlaceholder);
  if (holes != 1) {
    throw ValidationError("query must contain exactly one placeholder, found " +
                          std::to_string(holes));
  }
  if (count_token(s.query, s.answer) != 0) throw ValidationError("answer '" + s.answer + "' appears in query");
  if (count_token(s.document, s.answer) == 0) {
    throw ValidationError("answer '" + s.answer + "' does not occur in document");
  }
}

/// The query with its placeholder replaced by the answer.
inline std::vector<std::string> splice_answer(const ClozeSample& s) {
  std::vector<std::string> out = s.query;
  std::replace(out.begin(), out.end(), std::string(kPlaceholder), s.answer);
  return out;
}

}  // namespace casreader
