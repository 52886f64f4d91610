#include "progkit/error.hpp"

namespace progkit {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::OverlapError: return "OverlapError";
    case ErrorCode::BoundaryOutOfRange: return "BoundaryOutOfRange";
    case ErrorCode::InvertedSpan: return "InvertedSpan";
    case ErrorCode::EmptyPlan: return "EmptyPlan";
    case ErrorCode::UnvalidatedInput: return "UnvalidatedInput";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NoValidSubtasks: return "NoValidSubtasks";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptySegment: return "EmptySegment";
    case ErrorCode::DegenerateLength: return "DegenerateLength";
    case ErrorCode::DegenerateSegmentSignal: return "DegenerateSegmentSignal";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::AuthError: return "AuthError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::EmptyResponse: return "EmptyResponse";
    case ErrorCode::NoFutureAction: return "NoFutureAction";
    case ErrorCode::MissingLabels: return "MissingLabels";
    case ErrorCode::TagNotFound: return "TagNotFound";
    case ErrorCode::DegenerateVariance: return "DegenerateVariance";
    case ErrorCode::EmptyPredictions: return "EmptyPredictions";
    case ErrorCode::MissingCutoff: return "MissingCutoff";
    case ErrorCode::KeyMismatch: return "KeyMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::MissingSuccess: return "MissingSuccess";
    case ErrorCode::MissingFailureType: return "MissingFailureType";
    case ErrorCode::EmptyTask: return "EmptyTask";
    case ErrorCode::InvalidTag: return "InvalidTag";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace progkit
