#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "progkit/annotation.hpp"
#include "progkit/pipeline.hpp"
#include "progkit/progress.hpp"
#include "progkit/splits.hpp"

namespace progkit {

/// Scripted trajectories with known segments for tests and demos. Features
/// move from one random anchor vector to the next inside each span with an
/// uneven speed profile and hold still in gaps and after a failure cut.
struct SynthConfig {
  int episodes = 20;
  std::uint64_t seed = 0;
  int min_subtasks = 1;
  int max_subtasks = 4;
  int min_frames = 40;
  int max_frames = 160;
  int feature_dim = 8;
  double fps = 30.0;
  int tasks = 3;
  double failure_rate = 0.3;
  std::vector<std::string> failure_types{"grasp_slip", "wrong_target"};
  std::vector<std::string> cameras{"front"};
  std::string dataset = "synth";
  /// Fraction of episodes scripted to make the mock annotator misbehave.
  double fault_rate = 0.0;
  /// Also write frame_%06d.png images of png_size x png_size pixels.
  bool write_png = false;
  int png_size = 32;

  void validate() const;
};

struct SynthEpisode {
  std::string episode_id;
  std::string task;
  std::string instruction;
  int num_frames = 0;
  SegmentationResult segmentation;  // ground truth as scripted
  Outcome outcome = Outcome::Success;
  std::optional<std::string> failure_type;
  std::optional<int> t_cut;
  FeatureMatrix features;
  nlohmann::json metadata;  // meta.json contents including the mock script
};

SynthEpisode synth_episode(const SynthConfig& config, int index);

/// In-memory pipeline inputs, one per (episode, camera).
std::vector<EpisodeSpec> synth_specs(const SynthConfig& config);

struct SynthSummary {
  int episodes = 0;
  int trajectories = 0;
  long long frames = 0;
  int failures = 0;
};

/// Writes `<root>/<dataset>/<episode>/meta.json`, per-camera features.bin
/// (PNG frames instead when enabled), `<root>/tags.csv` and
/// `<root>/cutoffs.jsonl` ({trajectory_id, t_cut} of failed trajectories).
SynthSummary write_synth_corpus(const std::filesystem::path& root, const SynthConfig& config);

}  // namespace progkit
