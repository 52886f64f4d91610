#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "progkit/annotation.hpp"

namespace progkit {

// ---------------------------------------------------------------------------
// Boundary metrics

struct BoundarySet {
  std::vector<double> positions;  // ascending, deduplicated, in [0,1]
  int source_length = 0;
};

/// Boundary frames of a segmentation: every span start s and every span end
/// transition e + 1 (capped at T - 1), normalized by T - 1 and deduplicated,
/// so contiguous spans share one boundary. Positions 0 and 1 are dropped
/// unless `include_endpoints`.
BoundarySet boundaries_from_spans(std::span<const std::pair<int, int>> spans, int num_frames,
                                  bool include_endpoints = false);
BoundarySet boundaries_from_segmentation(const SegmentationResult& seg, int num_frames,
                                         bool include_endpoints = false);

struct BoundaryMatch {
  int gt_index = 0;
  int pred_index = 0;
  double distance = 0.0;
};

struct Bf1Result {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int tp = 0;
  int fp = 0;
  int fn = 0;
  std::vector<BoundaryMatch> matches;
};

/// Ground-truth boundaries are visited in ascending order; each takes the
/// nearest still-unmatched prediction within `tol` (ties to the lower
/// prediction). Both sets empty scores 1.
Bf1Result bf1(const BoundarySet& pred, const BoundarySet& gt, double tol = 0.05);

struct MmaeResult {
  std::optional<double> matched_mae;  // nullopt when nothing matched
  std::optional<double> nearest_mae;  // nullopt when either set is empty
};

MmaeResult mmae(const Bf1Result& matches, const BoundarySet& pred, const BoundarySet& gt);

// ---------------------------------------------------------------------------
// Ordering metrics

/// Spearman rho with average ranks between predictions and ground truth.
/// DegenerateVariance when either side is constant or shorter than 2.
double voc(std::span<const double> predictions, std::span<const double> ground_truth);
/// Ground truth = frame order.
double voc(std::span<const double> predictions);

/// Kendall tau-b, all pairs.
double kendall_tau(std::span<const double> predictions, std::span<const double> ground_truth);
double kendall_tau(std::span<const double> predictions);

/// Average ranks (1-based) with ties sharing the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

// ---------------------------------------------------------------------------
// Resolution

struct EprConfig {
  double tau = 0.5;
  int k_max = 4096;

  void validate() const;
};

struct EprResult {
  double value = 0.0;  // log2 of the largest satisfying bin count
  int k = 1;
  bool clamped = false;  // some prediction was outside [0,1]
};

/// Scans k = 1..k_max with bins min(floor(p*k), k-1) and keeps the largest k
/// whose occupied-bin count is at least tau*k.
EprResult epr(std::span<const double> predictions, const EprConfig& config = {});

// ---------------------------------------------------------------------------
// Success metrics

std::vector<bool> success_labels(std::span<const double> values, double threshold = 0.95);

struct MccResult {
  double value = 0.0;
  bool degenerate = false;  // zero denominator, value reported as 0
  int tp = 0;
  int tn = 0;
  int fp = 0;
  int fn = 0;
};

MccResult mcc(const std::vector<bool>& predicted, const std::vector<bool>& actual);

struct FailSeries {
  std::string trajectory_id;
  std::vector<double> predictions;
  std::optional<int> t_cut;
  /// Source frame of each prediction; empty means 0..n-1.
  std::vector<int> frame_ids;
  /// Trajectory length used for normalization; 0 means predictions.size().
  int num_frames = 0;
};

struct FailTrajectoryResult {
  std::string trajectory_id;
  int t_star = 0;
  int t_cut = 0;
  double error = 0.0;  // frames
  double normalized_error = 0.0;  // error / T
};

struct MaeFailResult {
  double mae = 0.0;
  double normalized_mae = 0.0;
  std::vector<FailTrajectoryResult> per_trajectory;
};

/// Earliest frame reaching the maximum prediction.
int earliest_argmax(std::span<const double> values);

MaeFailResult mae_fail(std::span<const FailSeries> series);

double progress_mae(std::span<const double> predictions, std::span<const double> ground_truth);

// ---------------------------------------------------------------------------
// Harnesses

/// Runs `evaluate` once on the first trajectory as warm-up, then times each
/// trajectory serially; returns mean seconds per trajectory.
double latency_harness(const std::function<void(const std::string&)>& evaluate,
                       const std::vector<std::string>& trajectories);

struct HumanEvalBundle {
  std::uint64_t seed = 0;
  /// sample key -> [(anonymous code, output)] in presentation order.
  std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> entries;
  std::map<std::string, std::string> answer_key;  // code -> model name

  nlohmann::ordered_json bundle_json() const;
  nlohmann::ordered_json key_json() const;
};

/// Replaces model names by codes ("system_A", ...) drawn in seeded order and
/// shuffles each sample's outputs. KeyMismatch unless every model has the
/// same sample keys.
HumanEvalBundle human_eval_export(const std::map<std::string, std::map<std::string, std::string>>& outputs,
                                  std::uint64_t seed);

}  // namespace progkit
