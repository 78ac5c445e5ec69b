#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace casreader {

enum class ErrorKind {
  usage,
  dimension,
  index,
  configuration,
  validation,
  parse,
  numeric,
  io,
  corruption,
  contract,
  empty_support,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return "usage";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::index: return "index";
    case ErrorKind::configuration: return "configuration";
    case ErrorKind::validation: return "validation";
    case ErrorKind::parse: return "parse";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::io: return "io";
    case ErrorKind::corruption: return "corruption";
    case ErrorKind::contract: return "contract";
    case ErrorKind::empty_support: return "empty_support";
  }
  return "unknown";
}

/// Every failure raised by the library carries one ErrorKind so callers (and
/// the CLI exit-code mapping) can branch on the class without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

template <ErrorKind K>
class KindedError : public Error {
 public:
  explicit KindedError(const std::string& message) : Error(K, message) {}
};

using UsageError = KindedError<ErrorKind::usage>;
using DimensionError = KindedError<ErrorKind::dimension>;
using IndexError = KindedError<ErrorKind::index>;
using ConfigError = KindedError<ErrorKind::configuration>;
using ValidationError = KindedError<ErrorKind::validation>;
using ParseError = KindedError<ErrorKind::parse>;
using NumericError = KindedError<ErrorKind::numeric>;
using IoError = KindedError<ErrorKind::io>;
using CorruptionError = KindedError<ErrorKind::corruption>;
using ContractError = KindedError<ErrorKind::contract>;
using EmptySupportError = KindedError<ErrorKind::empty_support>;

}  // namespace casreader
