#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace progkit {

enum class Outcome { Success, Failure };

struct TrajectoryTag {
  std::string trajectory_id;
  std::string task;
  Outcome outcome = Outcome::Success;
  std::optional<std::string> failure_type;
};

/// CSV with header `trajectory_id,task,outcome,failure_type`. Double-quoted
/// fields may contain commas. InvalidTag on unknown outcomes, a failure
/// without a type, or a success with one.
std::vector<TrajectoryTag> parse_tags_csv(std::istream& in);
std::vector<TrajectoryTag> read_tags_csv(const std::filesystem::path& path);
void write_tags_csv(std::ostream& out, std::span<const TrajectoryTag> tags);

enum class SplitMode { Succ, SuccFail };

SplitMode split_mode_from_string(const std::string& text);

struct OneShotSplit {
  std::vector<std::string> train;  // sorted
  std::vector<std::string> test;  // sorted
};

/// Picks one success per task and, in succ_fail mode, one trajectory per
/// (task, failure type). Candidates are sorted by id and drawn with a
/// mt19937_64 seeded by `seed`, tasks and failure types in sorted order.
/// `expected_failure_types` (task -> types) makes absent pairs an error;
/// without it the types present in the tags are used.
OneShotSplit build_oneshot_splits(std::span<const TrajectoryTag> tags, SplitMode mode, std::uint64_t seed,
                                  const std::map<std::string, std::vector<std::string>>* expected_failure_types = nullptr);

struct AdvantageConfig {
  int horizon = 50;
  double top_fraction = 0.3;
  /// Rank whole trajectories by mean advantage instead of individual steps.
  bool per_trajectory = false;

  void validate() const;
};

struct TrajectoryProgress {
  std::string trajectory_id;
  std::string task;
  std::vector<double> values;
};

struct AdvantageLabel {
  std::string trajectory_id;
  std::string task;
  int t = 0;
  double advantage = 0.0;
  bool positive = false;
};

/// advantage(t) = p(min(t + H, T - 1)) - p(t). Within each task the
/// ceil(top_fraction * n) highest advantages are positive; ties go to the
/// earlier (trajectory_id, t). Output is ordered by task, trajectory, t.
std::vector<AdvantageLabel> rft_advantage_labels(std::span<const TrajectoryProgress> trajectories,
                                                 const AdvantageConfig& config = {});

/// ceil(fraction * n), robust to fractions like 0.3 * 10 landing just above 3.
std::size_t top_count(double fraction, std::size_t n);

}  // namespace progkit
