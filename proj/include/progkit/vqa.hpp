#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "progkit/annotation.hpp"

namespace progkit {

struct SamplingConfig {
  double fps = 2.0;
  int max_frames = 512;
  int window = 4;
  int min_pixels = 32 * 32;
  int max_pixels = 512 * 512;
  /// Recording rate of the source trajectories; annotations do not carry it.
  double source_fps = 30.0;
  /// Prefix for image references: `<root>/<dataset>/<episode>/<camera>/frame_%06d.png`.
  std::string image_root;

  void validate() const;
};

enum class VqaFamily { SegWithTask, SegTaskFree, NextStep, FuturePlan, Progress };

/// "a1", "a2", "b1", "b2", "c".
std::string_view family_code(VqaFamily family);
VqaFamily family_from_code(std::string_view code);
/// "seg_with_task", "seg_task_free", "next_step", "future_plan", "progress".
std::string_view family_name(VqaFamily family);

struct FrameRef {
  int frame_id = 0;  // index in the source trajectory
  std::optional<int> marker;  // position in the sampled sequence, for segmentation samples
  std::string image;
};

struct VqaSample {
  VqaFamily family = VqaFamily::SegWithTask;
  std::string instruction;
  std::vector<FrameRef> visual_refs;
  std::string prompt;
  std::string target;
  std::optional<double> progress_value;
  std::string trajectory_id;
  std::optional<int> frame_id;  // anchor frame t of window samples

  nlohmann::ordered_json to_json() const;
};

/// All annotations of one trajectory, frames 0..T-1 in order.
struct EpisodeAnnotations {
  EpisodeRef episode;
  SegmentationResult segmentation;
  std::vector<AnnotationRecord> records;
};

/// Rebuilds the segmentation of one trajectory from its per-frame records:
/// each contiguous run of a subtask id is a valid span, and planned subtasks
/// still listed as remaining on the last frame without a span are appended
/// without boundaries. Records must cover frames 0..T-1 exactly once.
SegmentationResult segmentation_from_records(std::span<const AnnotationRecord> records);

/// Groups records by trajectory id (sorted) and rebuilds each segmentation.
std::vector<EpisodeAnnotations> group_episodes(const std::vector<AnnotationRecord>& records);

/// Number of frames sampled from a T-frame trajectory:
/// clamp(round(T * fps / source_fps), 1, min(T, max_frames)).
int sampled_length(int num_frames, const SamplingConfig& config);
/// Sampled position j shows source frame floor(j * T / S).
int sampled_to_source(int j, int num_frames, int samples);
/// Source frame i is numbered floor(i * S / T) in the sampled sequence.
int source_to_sampled(int i, int num_frames, int samples);

/// Window frames ending at t, spaced at the sampling rate, ascending.
std::vector<int> window_frames(int t, const SamplingConfig& config);

std::string seg_with_task_prompt(const std::string& task);
std::string seg_task_free_prompt();
std::string next_step_prompt(const std::string& task);
std::string future_plan_prompt(const std::string& task);
std::string progress_prompt(const std::string& task);

VqaSample gen_action_segmentation(const EpisodeAnnotations& episode, bool with_task, const SamplingConfig& config);
VqaSample gen_next_step(const EpisodeAnnotations& episode, int t, const SamplingConfig& config);
VqaSample gen_future_plan(const EpisodeAnnotations& episode, int t, const SamplingConfig& config);
/// Uses the `progress` field of the record at t; MissingLabels when it is null.
VqaSample gen_progress(const EpisodeAnnotations& episode, int t, const SamplingConfig& config);

/// "<progress> 37.50 %</progress>" for 0.375.
std::string render_progress_tag(double value);

struct ParsedProgress {
  double value = 0.0;  // fraction in [0,1]
  bool clamped = false;
};

/// Last `<progress> P %</progress>` span wins; whitespace and `%` optional.
/// P is a percentage; values outside [0,100] are clamped and flagged.
ParsedProgress parse_progress_tag(std::string_view text);

/// Anchor frames for window families: floor(i * (T-1) / (n-1)) for
/// i = 0..n-1, deduplicated; n = 1 gives frame 0.
std::vector<int> density_frames(int num_frames, int density);

}  // namespace progkit
