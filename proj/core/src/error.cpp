#include "fcc/error.hpp"

namespace fcc {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::io: return "io";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::unsupported: return "unsupported";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::dimension_overflow: return "dimension_overflow";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::missing_file: return "missing_file";
    case ErrorCode::invariant: return "invariant";
    case ErrorCode::divergence: return "divergence";
  }
  return "unknown";
}

}  // namespace fcc
