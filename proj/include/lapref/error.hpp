#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lapref {

enum class ErrorCode {
  kInvalidArgument,
  kDimensionMismatch,
  kNotPositiveDefinite,
  kNonFiniteGradient,
  kNonFiniteValue,
  kNonFiniteElbo,
  kDiverged,
  kAdaptationFailed,
  kNotConverged,
  kParseError,
  kUnsupportedVersion,
  kIoError,
};

// Stable machine-readable name, e.g. "NotPositiveDefinite".
std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace lapref
