#pragma once

#include <stdexcept>
#include <string>

namespace gingr {

enum class ErrorKind {
  Validation,          // input violates a type invariant
  Parameter,           // out-of-range scalar parameter
  Format,              // file could not be parsed
  Io,                  // file could not be read or written
  Unsupported,         // operation not defined for this input
  Domain,              // kernel queried outside its domain
  Numerical,           // factorization or solve failed
  Alignment,           // degenerate point configuration for Umeyama
  EmptyCorrespondence, // every candidate pair was filtered
  Config               // run configuration rejected
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Validation: return "validation error";
    case ErrorKind::Parameter: return "parameter error";
    case ErrorKind::Format: return "format error";
    case ErrorKind::Io: return "i/o error";
    case ErrorKind::Unsupported: return "unsupported operation";
    case ErrorKind::Domain: return "domain error";
    case ErrorKind::Numerical: return "numerical error";
    case ErrorKind::Alignment: return "alignment error";
    case ErrorKind::EmptyCorrespondence: return "empty correspondence";
    case ErrorKind::Config: return "config error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), message_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// The message without the kind prefix.
  const std::string& message() const noexcept { return message_; }

  /// True for failures caused by the numbers rather than by the inputs' shape.
  bool is_numerical() const noexcept {
    return kind_ == ErrorKind::Numerical || kind_ == ErrorKind::Alignment ||
           kind_ == ErrorKind::EmptyCorrespondence;
  }

 private:
  ErrorKind kind_;
  std::string message_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace gingr
