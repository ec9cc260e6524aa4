#include "codesfm/error.hpp"

namespace codesfm {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::NegativeDepth: return "NegativeDepth";
    case ErrorCode::ProximityOutOfRange: return "ProximityOutOfRange";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::CodeSizeMismatch: return "CodeSizeMismatch";
    case ErrorCode::LevelOutOfRange: return "LevelOutOfRange";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::UnknownVariable: return "UnknownVariable";
    case ErrorCode::UnknownFrame: return "UnknownFrame";
    case ErrorCode::IndefiniteSystem: return "IndefiniteSystem";
    case ErrorCode::SingularBlock: return "SingularBlock";
    case ErrorCode::DivergenceDetected: return "DivergenceDetected";
    case ErrorCode::InsufficientOverlap: return "InsufficientOverlap";
    case ErrorCode::InitializationFailed: return "InitializationFailed";
    case ErrorCode::TrackingLost: return "TrackingLost";
  }
  return "Unknown";
}

}  // namespace codesfm
