#ifndef KHG_ERROR_HPP
#define KHG_ERROR_HPP

#include <stdexcept>
#include <string>

namespace khg {

/// Failure categories; each maps onto one CLI exit code.
enum class ErrorKind {
  validation,         // bad input values (exit 4)
  unknown_reference,  // unknown scenario or section name (exit 2)
  missing_input,      // required file or data absent (exit 3)
  format,             // malformed file or dimension mismatch (exit 4)
  numerical           // solver failure, indefinite operator, divergence (exit 5)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::unknown_reference:
      return 2;
    case ErrorKind::missing_input:
      return 3;
    case ErrorKind::validation:
    case ErrorKind::format:
      return 4;
    case ErrorKind::numerical:
      return 5;
  }
  return 1;
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace khg

#endif  // KHG_ERROR_HPP
