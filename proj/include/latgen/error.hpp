#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace latgen {

enum class ErrorCode {
  InvalidArgument,
  DegenerateGeometry,
  Shape,
  Format,
  Validation,
  Numeric,
  Io,
  NotFound,
  Conflict,
  Resolution,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::DegenerateGeometry: return "degenerate_geometry";
    case ErrorCode::Shape: return "shape";
    case ErrorCode::Format: return "format";
    case ErrorCode::Validation: return "validation";
    case ErrorCode::Numeric: return "numeric";
    case ErrorCode::Io: return "io";
    case ErrorCode::NotFound: return "not_found";
    case ErrorCode::Conflict: return "conflict";
    case ErrorCode::Resolution: return "resolution";
  }
  return "unknown";
}

// Every failure raised by the library carries a typed code; the CLI maps it to
// an exit status and the service to an HTTP status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message, std::string detail = {})
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        message_(std::move(message)),
        detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& message() const noexcept { return message_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string message_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorCode code, std::string message, std::string detail = {}) {
  throw Error(code, std::move(message), std::move(detail));
}

inline void require(bool condition, ErrorCode code, std::string_view message) {
  if (!condition) fail(code, std::string(message));
}

}  // namespace latgen
