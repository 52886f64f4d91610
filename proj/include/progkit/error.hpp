#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace progkit {

enum class ErrorCode {
  // annotation model
  OverlapError,
  BoundaryOutOfRange,
  InvertedSpan,
  EmptyPlan,
  UnvalidatedInput,
  SchemaViolation,
  // progress labeler
  DimensionMismatch,
  NoValidSubtasks,
  LengthMismatch,
  EmptySegment,
  DegenerateLength,
  DegenerateSegmentSignal,
  // pipeline
  BackendUnavailable,
  AuthError,
  ConfigError,
  ParseError,
  EmptyResponse,
  // vqa
  NoFutureAction,
  MissingLabels,
  TagNotFound,
  // metrics
  DegenerateVariance,
  EmptyPredictions,
  MissingCutoff,
  KeyMismatch,
  EmptyInput,
  // splits / rft
  MissingSuccess,
  MissingFailureType,
  EmptyTask,
  InvalidTag,
  // io
  IoError,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries a stable code so callers
/// (CLI exit JSON, bindings) can report it without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace progkit
