#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace codesfm {

enum class ErrorCode {
  NonPositiveDepth,
  NegativeDepth,
  ProximityOutOfRange,
  InvalidArgument,
  CodeSizeMismatch,
  LevelOutOfRange,
  DimensionMismatch,
  FormatError,
  IoError,
  UnsupportedFormat,
  UnknownVariable,
  UnknownFrame,
  IndefiniteSystem,
  SingularBlock,
  DivergenceDetected,
  InsufficientOverlap,
  InitializationFailed,
  TrackingLost,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; `code()` identifies the failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace codesfm
