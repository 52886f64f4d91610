#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "progkit/annotation.hpp"
#include "progkit/backend.hpp"
#include "progkit/progress.hpp"
#include "progkit/prompts.hpp"

namespace progkit {

/// Per-stage sleep injected for profiling and overlap tests. Each sleep is
/// scaled by a factor drawn uniformly from [1 - jitter, 1 + jitter] with a
/// per-(episode, stage) seed, so randomized runs are reproducible.
struct SimulatedLatency {
  std::chrono::microseconds read{0};
  std::chrono::microseconds preprocess{0};
  std::chrono::microseconds annotate{0};
  std::chrono::microseconds consume{0};
  double jitter = 0.0;
};

struct PipelineConfig {
  std::size_t queue_capacity = 64;
  int preprocessor_workers = 4;
  int annotator_concurrency = 8;
  double dedup_threshold = 0.05;
  RetryPolicy retry{3, std::chrono::milliseconds(50)};
  int plan_sample_frames = 8;
  int segment_sample_frames = 32;
  /// Make the first frame of every valid span a keyframe so no span is left
  /// without reasoning.
  bool anchor_span_starts = true;
  int pixel_grid = 16;
  DiffMetric diff_metric = DiffMetric::L2;
  std::uint64_t seed = 0;
  SimulatedLatency simulated;

  /// Throws ConfigError on non-positive counts or a threshold outside [0,1].
  void validate() const;
  nlohmann::json to_json() const;
};

/// One pipeline work item: a (dataset, episode, camera) trajectory.
struct EpisodeSpec {
  EpisodeRef ref;
  std::filesystem::path camera_dir;  // empty for in-memory episodes
  nlohmann::json metadata = nlohmann::json::object();
  /// In-memory features; when absent the reader loads features.bin or the
  /// frame_%06d.png images from camera_dir.
  std::optional<FeatureMatrix> features;
};

class EpisodeSource {
 public:
  virtual ~EpisodeSource() = default;
  virtual std::optional<EpisodeSpec> next() = 0;
};

/// Yields a fixed list of episodes in order.
class VectorSource : public EpisodeSource {
 public:
  explicit VectorSource(std::vector<EpisodeSpec> episodes) : episodes_(std::move(episodes)) {}
  std::optional<EpisodeSpec> next() override;

 private:
  std::vector<EpisodeSpec> episodes_;
  std::size_t pos_ = 0;
};

/// Walks `<root>/<dataset>/<episode>/<camera>/` in lexicographic order. Each
/// episode directory holds meta.json ({instruction, num_frames, ...}); each
/// camera directory holds either frame_%06d.png images or features.bin.
/// Metadata problems surface when the episode is read, not while scanning.
class DirectorySource : public EpisodeSource {
 public:
  explicit DirectorySource(const std::filesystem::path& root);
  std::optional<EpisodeSpec> next() override;
  std::size_t size() const { return specs_.size(); }

 private:
  std::vector<EpisodeSpec> specs_;
  std::size_t pos_ = 0;
};

struct QuarantineEntry {
  EpisodeRef episode;
  std::string stage;
  std::string error;
  std::string message;
  std::string raw_response;

  nlohmann::json to_json() const;
};

struct StageTimes {
  std::chrono::nanoseconds read{0};
  std::chrono::nanoseconds preprocess{0};
  std::chrono::nanoseconds annotate{0};
  std::chrono::nanoseconds consume{0};

  std::chrono::nanoseconds total() const { return read + preprocess + annotate + consume; }
};

struct PipelineReport {
  std::size_t episodes_in = 0;
  std::size_t episodes_out = 0;
  std::size_t quarantined = 0;
  std::size_t frames_out = 0;
  std::size_t keyframes = 0;
  std::size_t gap_frames = 0;
  std::size_t spans_without_keyframe = 0;
  std::size_t dropped_boxes = 0;
  std::vector<std::string> warnings;
  StageTimes busy;
  std::chrono::nanoseconds wall_time{0};
  double throughput_fps = 0.0;  // output frames per second of wall time
  std::size_t reader_blocked_pushes = 0;
  std::chrono::nanoseconds reader_blocked_time{0};

  /// Timing fields are omitted when `include_timing` is false so reports of
  /// seeded runs compare byte-for-byte.
  nlohmann::json to_json(bool include_timing = true) const;
};

struct PipelineOutput {
  std::vector<AnnotationRecord> records;  // sorted by (dataset, episode, frame, camera)
  std::vector<QuarantineEntry> quarantine;  // sorted by trajectory id
  PipelineReport report;
};

/// Four concurrent stage groups connected by bounded queues:
/// reader -> preprocessors -> annotator workers -> consumer. A full queue
/// blocks its producer. Every source episode ends up either in the output
/// or in quarantine exactly once; per-episode failures never abort the run.
PipelineOutput run_pipeline(EpisodeSource& source, AnnotatorBackend& backend, const PipelineConfig& config);

void write_quarantine_jsonl(const std::filesystem::path& path, const std::vector<QuarantineEntry>& entries);

/// frame_%06d.png files of a camera directory, sorted.
std::vector<std::filesystem::path> list_frame_images(const std::filesystem::path& camera_dir);

/// Grid-downscaled grayscale features of each image, one row per frame.
FeatureMatrix image_features(const std::vector<std::filesystem::path>& images, int pixel_grid);

/// features.bin when present, otherwise features of the frame images.
FeatureMatrix load_camera_features(const std::filesystem::path& camera_dir, int pixel_grid = 16);

/// Sorts records by (dataset_name, episode_id, frame_id, camera_key).
void sort_records(std::vector<AnnotationRecord>& records);

}  // namespace progkit
