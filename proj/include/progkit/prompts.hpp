#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "progkit/annotation.hpp"
#include "progkit/backend.hpp"
#include "progkit/error.hpp"

namespace progkit {

/// Raised when annotator output cannot be used; keeps the raw response so the
/// pipeline can quarantine it verbatim.
class ResponseError : public Error {
 public:
  ResponseError(ErrorCode code, const std::string& message, std::string raw)
      : Error(code, message), raw_(std::move(raw)) {}

  const std::string& raw_response() const noexcept { return raw_; }

 private:
  std::string raw_;
};

std::string render_plan_prompt(const std::string& task);
std::string render_segmentation_prompt(const std::string& task, const std::vector<std::string>& plan);
std::string render_reasoning_prompt(const std::string& task, CompletionState state,
                                    const std::vector<std::string>& remaining);

/// Word budget of the reasoning template for `state` (150 unfinished, 50 otherwise).
int reasoning_word_budget(CompletionState state);

struct TaskPlan {
  std::vector<std::string> steps;
  std::vector<std::string> warnings;
};

/// Parses a numbered list ("1. Grasp the red block"). Prose before or after
/// the list is dropped with a warning; duplicate, missing or out-of-order
/// indices and empty descriptions raise ParseError. Steps that do not start
/// with a known action verb only warn.
TaskPlan parse_plan(const std::string& response);

/// Extracts the outermost JSON object (code fences tolerated) and maps it to
/// a SegmentationResult. Malformed JSON raises ParseError; missing or
/// mistyped keys raise SchemaViolation.
SegmentationResult parse_segmentation(const std::string& response);

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds backoff_base{50};
};

TaskPlan plan_task(const EpisodeContext& context, const std::vector<FrameInput>& sampled_frames,
                   AnnotatorBackend& backend);

ValidatedSegmentation segment_subtasks(const EpisodeContext& context, const std::vector<std::string>& plan,
                                       const std::vector<FrameInput>& indexed_frames, int num_frames,
                                       AnnotatorBackend& backend,
                                       ValidationPolicy policy = ValidationPolicy::AutoTrim);

struct KeyframeReasoning {
  std::string text;
  std::vector<GroundingBox> boxes;
  int dropped_boxes = 0;
  std::vector<std::string> warnings;
};

/// Renders the state-specific template and queries the backend. Empty
/// responses are retried with exponential backoff, then EmptyResponse.
KeyframeReasoning annotate_keyframe(const EpisodeContext& context, const FrameInput& frame,
                                    CompletionState state, const std::vector<std::string>& remaining,
                                    AnnotatorBackend& backend, const RetryPolicy& retry = {});

/// Splits `<box>label: x_min, y_min, x_max, y_max</box>` tags out of a
/// reasoning response. Boxes that are degenerate or outside [0,1] are dropped
/// and counted.
KeyframeReasoning extract_grounding_boxes(const std::string& response);

}  // namespace progkit
