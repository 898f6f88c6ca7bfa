#include "nola/error.hpp"

namespace nola {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::EmptyClassList: return "EmptyClassList";
    case ErrorCode::MissingClass: return "MissingClass";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ClientUnavailable: return "ClientUnavailable";
    case ErrorCode::PlaceholderMissing: return "PlaceholderMissing";
    case ErrorCode::RateLimited: return "RateLimited";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::WidthMismatch: return "WidthMismatch";
    case ErrorCode::DegenerateClass: return "DegenerateClass";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::InvalidCounts: return "InvalidCounts";
    case ErrorCode::AlignmentMismatch: return "AlignmentMismatch";
    case ErrorCode::InvalidEpsilon: return "InvalidEpsilon";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::EmptyPseudoSet: return "EmptyPseudoSet";
    case ErrorCode::UntrainedHead: return "UntrainedHead";
    case ErrorCode::UntrainedDL: return "UntrainedDL";
    case ErrorCode::MissingCheckpoint: return "MissingCheckpoint";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::Unsupported: return "Unsupported";
    case ErrorCode::Locked: return "Locked";
  }
  return "Unknown";
}

}  // namespace nola
