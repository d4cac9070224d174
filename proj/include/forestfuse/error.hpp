#pragma once

#include <stdexcept>
#include <string>

namespace forestfuse {

// Every failure raised by the library derives from Error. The kind lets the
// CLI map failures onto exit codes and lets tests assert the category.
enum class ErrorKind {
  schema,
  parse,
  format,
  index,
  argument,
  config,
  precondition,
  capacity,
  class_error,
  imputation,
  version,
  provenance,
  io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::schema: return "schema error";
    case ErrorKind::parse: return "parse error";
    case ErrorKind::format: return "format error";
    case ErrorKind::index: return "index error";
    case ErrorKind::argument: return "argument error";
    case ErrorKind::config: return "config error";
    case ErrorKind::precondition: return "precondition error";
    case ErrorKind::capacity: return "capacity error";
    case ErrorKind::class_error: return "class error";
    case ErrorKind::imputation: return "imputation error";
    case ErrorKind::version: return "version error";
    case ErrorKind::provenance: return "provenance error";
    case ErrorKind::io: return "io error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace forestfuse
