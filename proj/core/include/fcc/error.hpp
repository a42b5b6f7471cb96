#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fcc {

enum class ErrorCode {
  io,
  bad_magic,
  unsupported,
  truncated,
  non_finite,
  dimension_overflow,
  shape_mismatch,
  invalid_argument,
  missing_file,
  invariant,
  divergence,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries a stable code so callers (and
/// the CLI) can report it in a machine-parsable form.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace fcc
