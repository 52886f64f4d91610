#include "progkit/progress.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "progkit/error.hpp"

namespace progkit {

void ProgressConfig::validate() const {
  if (!(clip_lo > 0.0) || !(clip_lo <= clip_hi)) {
    throw Error(ErrorCode::ConfigError, "clip bounds must satisfy 0 < lo <= hi, got [" +
                                            std::to_string(clip_lo) + ", " + std::to_string(clip_hi) + "]");
  }
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
    throw Error(ErrorCode::ConfigError, "epsilon must be a finite value >= 0");
  }
}

std::vector<double> frame_diffs(const VisualSignal& signal, DiffMetric metric) {
  if (const auto* mags = std::get_if<StepMagnitudes>(&signal)) {
    for (double d : mags->values) {
      if (!std::isfinite(d) || d < 0.0) {
        throw Error(ErrorCode::DimensionMismatch, "step magnitudes must be finite and >= 0");
      }
    }
    return mags->values;
  }
  const auto& f = std::get<FeatureMatrix>(signal);
  if (f.num_frames < 1) throw Error(ErrorCode::DimensionMismatch, "feature matrix has no frames");
  if (f.dim < 1 || f.values.size() != f.num_frames * f.dim) {
    throw Error(ErrorCode::DimensionMismatch,
                "feature matrix holds " + std::to_string(f.values.size()) + " values, expected " +
                    std::to_string(f.num_frames) + " x " + std::to_string(f.dim));
  }
  std::vector<double> diffs(f.num_frames - 1);
  for (std::size_t t = 1; t < f.num_frames; ++t) {
    const auto cur = f.row(t);
    const auto prev = f.row(t - 1);
    double acc = 0.0;
    for (std::size_t i = 0; i < f.dim; ++i) {
      const double delta = cur[i] - prev[i];
      acc += metric == DiffMetric::L1 ? std::abs(delta) : delta * delta;
    }
    diffs[t - 1] = metric == DiffMetric::L1 ? acc : std::sqrt(acc);
  }
  return diffs;
}

std::map<int, double> subtask_weights(std::span<const SubtaskSegment> segments, int num_frames,
                                      const ProgressConfig& config) {
  config.validate();
  if (num_frames < 1) throw Error(ErrorCode::LengthMismatch, "num_frames must be >= 1");
  const auto k = std::count_if(segments.begin(), segments.end(),
                               [](const SubtaskSegment& s) { return s.is_valid(); });
  if (k == 0) throw Error(ErrorCode::NoValidSubtasks, "no segment has both boundaries");
  std::map<int, double> weights;
  for (const auto& s : segments) {
    if (!s.is_valid()) continue;
    const double share = static_cast<double>(k) * s.duration() / num_frames;
    weights[s.id] = std::clamp(share, config.clip_lo, config.clip_hi);
  }
  return weights;
}

ProgressLabels progress_labels(const SegmentationResult& seg, std::span<const double> diffs,
                               const ProgressConfig& config) {
  config.validate();
  const int num_frames = static_cast<int>(diffs.size()) + 1;
  for (const auto& s : seg.subtasks) {
    if (!s.is_valid()) continue;
    if (*s.start_frame < 0 || *s.complete_frame >= num_frames) {
      throw Error(ErrorCode::LengthMismatch,
                  "subtask " + std::to_string(s.id) + " ends at frame " + std::to_string(*s.complete_frame) +
                      " but only " + std::to_string(num_frames) + " frames have diffs");
    }
    if (*s.start_frame == *s.complete_frame) {
      throw Error(ErrorCode::EmptySegment,
                  "subtask " + std::to_string(s.id) + " spans a single frame and owns no steps");
    }
  }
  // rejects overlap / inverted spans
  (void)expand_segments_to_frames(seg, num_frames);

  ProgressLabels labels;
  labels.config = config;
  // a trajectory that never finished its first subtask keeps all-zero labels
  if (!seg.valid_segments().empty()) labels.per_subtask_budget = subtask_weights(seg.subtasks, num_frames, config);
  labels.completed = seg.all_completed();

  double total_budget = 0.0;
  for (const auto& [id, w] : labels.per_subtask_budget) total_budget += w;
  for (const auto& s : seg.subtasks) {
    if (!s.is_valid()) total_budget += 1.0;  // unobserved subtasks keep the equal-subtask prior
  }

  std::vector<double> increments(num_frames, 0.0);
  for (const auto& s : seg.subtasks) {
    if (!s.is_valid()) continue;
    double mass = 0.0;
    for (int t = *s.start_frame + 1; t <= *s.complete_frame; ++t) mass += diffs[t - 1] + config.epsilon;
    if (!(mass > 0.0)) {
      throw Error(ErrorCode::DegenerateSegmentSignal,
                  "subtask " + std::to_string(s.id) + " has zero visual change and epsilon = 0");
    }
    const double w = labels.per_subtask_budget.at(s.id);
    for (int t = *s.start_frame + 1; t <= *s.complete_frame; ++t) {
      increments[t] = w * (diffs[t - 1] + config.epsilon) / mass;
    }
  }

  labels.values.resize(num_frames);
  double acc = 0.0;
  labels.values[0] = 0.0;
  for (int t = 1; t < num_frames; ++t) {
    acc += increments[t];
    labels.values[t] = total_budget > 0.0 ? std::min(1.0, acc / total_budget) : 0.0;
  }
  if (labels.completed && total_budget > 0.0) {
    // rounding can leave the sum an ulp short of 1 after the last span
    int last_end = 0;
    for (const auto& s : seg.subtasks) last_end = std::max(last_end, *s.complete_frame);
    for (int t = last_end; t < num_frames; ++t) labels.values[t] = 1.0;
  }
  return labels;
}

ProgressLabels time_interp_baseline(int num_frames) {
  if (num_frames < 2) {
    throw Error(ErrorCode::DegenerateLength, "time interpolation needs T >= 2, got " + std::to_string(num_frames));
  }
  ProgressLabels labels;
  labels.completed = true;
  labels.values.resize(num_frames);
  for (int t = 0; t < num_frames; ++t) labels.values[t] = static_cast<double>(t) / (num_frames - 1);
  return labels;
}

}  // namespace progkit
