#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <variant>
#include <vector>

#include "progkit/annotation.hpp"

namespace progkit {

/// Row-major per-frame feature matrix (T rows of `dim` values).
struct FeatureMatrix {
  std::size_t num_frames = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t t) const { return {values.data() + t * dim, dim}; }
};

/// Precomputed per-step change magnitudes d_t for t = 1..T-1.
struct StepMagnitudes {
  std::vector<double> values;
};

using VisualSignal = std::variant<FeatureMatrix, StepMagnitudes>;

enum class DiffMetric { L1, L2 };

struct ProgressConfig {
  double clip_lo = 0.75;
  double clip_hi = 1.25;
  double epsilon = 1e-6;  // added to every per-step magnitude
  DiffMetric diff_metric = DiffMetric::L2;

  /// Throws ConfigError unless 0 < clip_lo <= clip_hi and epsilon >= 0.
  void validate() const;
};

struct ProgressLabels {
  std::vector<double> values;
  bool completed = false;
  ProgressConfig config;
  std::map<int, double> per_subtask_budget;  // subtask id -> w_k
};

/// d_t = |phi_t - phi_{t-1}| under `metric`; magnitudes pass through unchanged.
std::vector<double> frame_diffs(const VisualSignal& signal, DiffMetric metric);

/// w_k = clip(K * dur_k / T, clip_lo, clip_hi) over the valid segments, with
/// dur_k = complete - start + 1 frames.
std::map<int, double> subtask_weights(std::span<const SubtaskSegment> segments, int num_frames,
                                      const ProgressConfig& config = {});

/// Procedure-grounded progress targets.
///
/// Step t (frames t-1 -> t) belongs to segment k iff s_k < t <= e_k; every
/// other step is a gap step with zero increment. Inside segment k the step
/// increment is w_k * (d_t + eps) / sum_{u in k}(d_u + eps), so segment k
/// contributes exactly w_k / W to the final label, where W = sum of valid
/// weights plus 1 for every planned subtask without both boundaries. Labels
/// of a fully completed plan therefore end at exactly 1; unfinished plans end
/// strictly below 1.
ProgressLabels progress_labels(const SegmentationResult& seg, std::span<const double> diffs,
                               const ProgressConfig& config = {});

/// values[t] = t / (T - 1); the elapsed-time baseline.
ProgressLabels time_interp_baseline(int num_frames);

}  // namespace progkit
