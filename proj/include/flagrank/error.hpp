#pragma once

#include <stdexcept>
#include <string>

namespace flagrank {

// Every failure raised by the library derives from Error and carries a kind,
// so callers (notably the CLI) can map failures to exit codes without
// string matching.
enum class ErrorKind {
  invalid_shape,
  precondition,
  numeric,
  state,
  format,
  range,
  duplicate,
  conflict,
  undefined_metric,
  io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_shape: return "invalid-shape";
    case ErrorKind::precondition: return "precondition";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::state: return "state";
    case ErrorKind::format: return "format";
    case ErrorKind::range: return "range";
    case ErrorKind::duplicate: return "duplicate";
    case ErrorKind::conflict: return "conflict";
    case ErrorKind::undefined_metric: return "undefined-metric";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace flagrank
