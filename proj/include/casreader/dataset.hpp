#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "casreader/error.hpp"
#include "casreader/sample.hpp"

namespace casreader {

using Json = nlohmann::ordered_json;

// One JSON object per line:
//   {"document": [...], "query": [... "⟨X⟩" ...], "answer": "...",
//    "candidates": [...]?, "meta": {"doc_id": ..., "sentence": ..., "token": ...}?}

inline Json sample_to_json(const ClozeSample& s) {
  Json j;
  j["document"] = s.document;
  j["query"] = s.query;
  j["answer"] = s.answer;
  if (s.candidates) j["candidates"] = *s.candidates;
  Json meta = Json::object();
  if (!s.meta.doc_id.empty()) meta["doc_id"] = s.meta.doc_id;
  if (s.meta.sentence_index) meta["sentence"] = *s.meta.sentence_index;
  if (s.meta.token_index) meta["token"] = *s.meta.token_index;
  if (!meta.empty()) j["meta"] = meta;
  return j;
}

namespace detail {

inline std::vector<std::string> string_array(const Json& j, const char* field) {
  if (!j.is_array()) throw ParseError(std::string("field '") + field + "' must be an array of strings");
  std::vector<std::string> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_string()) throw ParseError(std::string("field '") + field + "' must be an array of strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace detail

/// Structural decoding only; ClozeSample invariants are checked separately.
inline ClozeSample sample_from_json(const Json& j) {
  if (!j.is_object()) throw ParseError("record is not a JSON object");
  for (const char* field : {"document", "query", "answer"})
    if (!j.contains(field)) throw ParseError(std::string("missing field '") + field + "'");
  ClozeSample s;
  s.document = detail::string_array(j["document"], "document");
  s.query = detail::string_array(j["query"], "query");
  if (!j["answer"].is_string()) throw ParseError("field 'answer' must be a string");
  s.answer = j["answer"].get<std::string>();
  if (j.contains("candidates") && !j["candidates"].is_null()) {
    s.candidates = detail::string_array(j["candidates"], "candidates");
  }
  if (j.contains("meta") && !j["meta"].is_null()) {
    const Json& m = j["meta"];
    if (!m.is_object()) throw ParseError("field 'meta' must be an object");
    if (m.contains("doc_id")) {
      if (m["doc_id"].is_string()) {
        s.meta.doc_id = m["doc_id"].get<std::string>();
      } else if (m["doc_id"].is_number_integer()) {
        s.meta.doc_id = std::to_string(m["doc_id"].get<long long>());
      } else {
        throw ParseError("meta.doc_id must be a string");
      }
    }
    if (m.contains("sentence")) {
      if (!m["sentence"].is_number_unsigned()) throw ParseError("meta.sentence must be a non-negative integer");
      s.meta.sentence_index = m["sentence"].get<std::size_t>();
    }
    if (m.contains("token")) {
      if (!m["token"].is_number_unsigned()) throw ParseError("meta.token must be a non-negative integer");
      s.meta.token_index = m["token"].get<std::size_t>();
    }
  }
  return s;
}

struct LoadedDataset {
  std::vector<ClozeSample> samples;
  std::vector<std::string> rejected;  // "line N: reason", lenient mode only
};

/// Strict mode throws on the first bad line (ParseError for malformed JSON
/// or schema, ValidationError for broken sample invariants); lenient mode
/// skips and reports such lines. Blank lines are ignored.
inline LoadedDataset load_dataset(std::istream& in, bool strict = true) {
  LoadedDataset out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    try {
      Json j;
      try {
        j = Json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed JSON (") + e.what() + ")");
      }
      ClozeSample s = sample_from_json(j);
      validate_sample(s);
      out.samples.push_back(std::move(s));
    } catch (const ParseError& e) {
      if (strict) throw ParseError(where + e.what());
      out.rejected.push_back(where + e.what());
    } catch (const ValidationError& e) {
      if (strict) throw ValidationError(where + e.what());
      out.rejected.push_back(where + e.what());
    }
  }
  return out;
}

inline LoadedDataset load_dataset(const std::string& path, bool strict = true) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset '" + path + "'");
  return load_dataset(in, strict);
}

inline void save_dataset(std::ostream& out, const std::vector<ClozeSample>& samples) {
  for (const auto& s : samples) out << sample_to_json(s).dump() << '\n';
}

inline void save_dataset(const std::string& path, const std::vector<ClozeSample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset '" + path + "'");
  save_dataset(out, samples);
  if (!out) throw IoError("failed writing dataset '" + path + "'");
}

}  // namespace casreader
