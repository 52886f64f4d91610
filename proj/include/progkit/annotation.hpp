#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace progkit {

struct EpisodeRef {
  std::string dataset_name;
  std::string episode_id;
  std::string camera_key;
  int num_frames = 0;  // 0 = unknown (records read without a `num_frames` key)
  std::string instruction;

  /// "<dataset>/<episode>/<camera>", the trajectory id used by metrics and splits.
  std::string trajectory_id() const;

  friend bool operator==(const EpisodeRef&, const EpisodeRef&) = default;
};

/// One planned atomic action. Both boundaries set = valid span; start only =
/// started but unfinished; both null = not present.
struct SubtaskSegment {
  int id = 0;
  std::string name;
  std::optional<int> start_frame;
  std::optional<int> complete_frame;
  std::string notes;

  bool is_valid() const { return start_frame.has_value() && complete_frame.has_value(); }
  bool is_started_unfinished() const { return start_frame.has_value() && !complete_frame.has_value(); }
  bool is_absent() const { return !start_frame.has_value() && !complete_frame.has_value(); }
  int duration() const { return *complete_frame - *start_frame + 1; }

  friend bool operator==(const SubtaskSegment&, const SubtaskSegment&) = default;
};

struct SegmentationResult {
  std::string task;
  std::vector<SubtaskSegment> subtasks;
  std::string overall_notes;

  std::vector<SubtaskSegment> valid_segments() const;
  /// Every planned subtask has both boundaries.
  bool all_completed() const;

  friend bool operator==(const SegmentationResult&, const SegmentationResult&) = default;
};

enum class CompletionState { Unfinished, Finished, GivenUp };

std::string_view to_string(CompletionState state);
CompletionState completion_from_string(std::string_view text);

enum class ReasoningSource { Keyframe, Propagated };

std::string_view to_string(ReasoningSource source);

struct GroundingBox {
  std::string label;
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  bool is_valid() const;

  friend bool operator==(const GroundingBox&, const GroundingBox&) = default;
};

struct AnnotationRecord {
  EpisodeRef episode;
  int frame_id = 0;
  std::optional<int> subtask_id;
  std::optional<std::string> subtask_name;
  std::string reasoning;
  ReasoningSource reasoning_source = ReasoningSource::Keyframe;
  CompletionState completion = CompletionState::Unfinished;
  std::vector<std::string> remaining_subtasks;
  std::vector<GroundingBox> grounding_boxes;
  std::optional<double> progress;
  /// Keys not known to this schema, preserved verbatim on round-trip.
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

// ---------------------------------------------------------------------------
// Segmentation validation

enum class ValidationPolicy { Strict, AutoTrim };

struct Repair {
  enum class Kind { Clamp, Trim, Drop, Reorder };
  Kind kind;
  int subtask_id;
  std::string detail;
};

struct ValidationReport {
  std::vector<Repair> repairs;
  std::vector<std::string> warnings;  // advisory only, e.g. notes over the word budget

  bool empty() const { return repairs.empty(); }
};

struct ValidatedSegmentation {
  SegmentationResult segmentation;
  ValidationReport report;
};

/// Checks annotator output against the trajectory length. Strict mode rejects
/// overlap and out-of-range boundaries; auto_trim repairs them and records
/// every repair. Inverted spans are always an error.
ValidatedSegmentation validate_segmentation(const SegmentationResult& seg, int num_frames,
                                            ValidationPolicy policy);

/// Per-frame subtask id; nullopt for frames outside every valid span.
std::vector<std::optional<int>> expand_segments_to_frames(const SegmentationResult& seg,
                                                          int num_frames);

struct PropagationReport {
  /// Subtask ids whose span contains no keyframe; their frames carry empty reasoning.
  std::vector<int> spans_without_keyframe;
  int frames_without_reasoning = 0;
};

struct PropagationResult {
  std::vector<AnnotationRecord> records;  // ascending frame_id, one per assigned frame
  PropagationReport report;
};

/// Densifies keyframe reasoning: each assigned non-keyframe copies the record
/// of the nearest keyframe inside the same subtask span (ties go to the
/// earlier keyframe). Grounding boxes are frame-specific and not copied.
PropagationResult propagate_keyframe_reasoning(
    std::span<const AnnotationRecord> keyframe_records,
    std::span<const std::optional<int>> frame_assignment, const EpisodeRef& episode,
    const std::map<int, std::string>& subtask_names = {});

/// Names of planned subtasks not yet completed at `frame`: complete_frame null
/// or later than `frame`. Order follows the segmentation order.
std::vector<std::string> remaining_at(const SegmentationResult& seg, int frame);

/// Number of whitespace-separated words.
int word_count(std::string_view text);

}  // namespace progkit
