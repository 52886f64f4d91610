#include "progkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "progkit/error.hpp"

namespace progkit {

namespace {

constexpr double kTolSlack = 1e-12;

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw Error(ErrorCode::LengthMismatch,
                std::string(what) + ": lengths differ (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

std::vector<double> frame_order(std::size_t n) {
  std::vector<double> out(n);
  std::iota(out.begin(), out.end(), 0.0);
  return out;
}

bool is_constant(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

void require_variance(std::span<const double> pred, std::span<const double> gt, const char* what) {
  require_same_length(pred.size(), gt.size(), what);
  if (pred.size() < 2) throw Error(ErrorCode::DegenerateVariance, std::string(what) + ": need at least 2 values");
  if (is_constant(pred)) throw Error(ErrorCode::DegenerateVariance, std::string(what) + ": predictions are constant");
  if (is_constant(gt)) throw Error(ErrorCode::DegenerateVariance, std::string(what) + ": ground truth is constant");
}

}  // namespace

BoundarySet boundaries_from_spans(std::span<const std::pair<int, int>> spans, int num_frames, bool include_endpoints) {
  if (num_frames < 2) throw Error(ErrorCode::DegenerateLength, "boundaries need at least 2 frames");
  const int last = num_frames - 1;
  std::set<int> frames;
  for (const auto& [s, e] : spans) {
    frames.insert(std::clamp(s, 0, last));
    frames.insert(std::clamp(e + 1, 0, last));
  }
  BoundarySet out;
  out.source_length = num_frames;
  for (int f : frames) {
    if (!include_endpoints && (f == 0 || f == last)) continue;
    out.positions.push_back(static_cast<double>(f) / last);
  }
  return out;
}

BoundarySet boundaries_from_segmentation(const SegmentationResult& seg, int num_frames, bool include_endpoints) {
  std::vector<std::pair<int, int>> spans;
  for (const auto& s : seg.valid_segments()) spans.emplace_back(*s.start_frame, *s.complete_frame);
  return boundaries_from_spans(spans, num_frames, include_endpoints);
}

Bf1Result bf1(const BoundarySet& pred, const BoundarySet& gt, double tol) {
  Bf1Result r;
  const auto& p = pred.positions;
  const auto& g = gt.positions;
  if (p.empty() && g.empty()) {
    r.precision = r.recall = r.f1 = 1.0;
    return r;
  }
  std::vector<int> gt_order(g.size());
  std::iota(gt_order.begin(), gt_order.end(), 0);
  std::stable_sort(gt_order.begin(), gt_order.end(), [&](int a, int b) { return g[a] < g[b]; });

  std::vector<bool> used(p.size(), false);
  for (int gi : gt_order) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t pi = 0; pi < p.size(); ++pi) {
      if (used[pi]) continue;
      const double d = std::abs(p[pi] - g[gi]);
      if (d <= tol + kTolSlack && d < best_d) {
        best = static_cast<int>(pi);
        best_d = d;
      }
    }
    if (best >= 0) {
      used[best] = true;
      r.matches.push_back({gi, best, best_d});
    }
  }
  r.tp = static_cast<int>(r.matches.size());
  r.fp = static_cast<int>(p.size()) - r.tp;
  r.fn = static_cast<int>(g.size()) - r.tp;
  r.precision = p.empty() ? 0.0 : static_cast<double>(r.tp) / p.size();
  r.recall = g.empty() ? 0.0 : static_cast<double>(r.tp) / g.size();
  r.f1 = 2.0 * r.tp / (2.0 * r.tp + r.fp + r.fn);
  return r;
}

MmaeResult mmae(const Bf1Result& matches, const BoundarySet& pred, const BoundarySet& gt) {
  MmaeResult r;
  if (!matches.matches.empty()) {
    double sum = 0.0;
    for (const auto& m : matches.matches) sum += m.distance;
    r.matched_mae = sum / matches.matches.size();
  }
  if (!pred.positions.empty() && !gt.positions.empty()) {
    double sum = 0.0;
    for (double g : gt.positions) {
      double best = std::numeric_limits<double>::infinity();
      for (double p : pred.positions) best = std::min(best, std::abs(p - g));
      sum += best;
    }
    r.nearest_mae = sum / gt.positions.size();
  }
  return r;
}

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double voc(std::span<const double> predictions, std::span<const double> ground_truth) {
  require_variance(predictions, ground_truth, "voc");
  const auto rx = average_ranks(predictions);
  const auto ry = average_ranks(ground_truth);
  const double n = static_cast<double>(rx.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mean;
    const double dy = ry[i] - mean;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double voc(std::span<const double> predictions) {
  const auto order = frame_order(predictions.size());
  return voc(predictions, order);
}

double kendall_tau(std::span<const double> predictions, std::span<const double> ground_truth) {
  require_variance(predictions, ground_truth, "kendall_tau");
  const std::size_t n = predictions.size();
  long long concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = predictions[i] - predictions[j];
      const double dy = ground_truth[i] - ground_truth[j];
      if (dx == 0.0 && dy == 0.0) continue;
      if (dx == 0.0) {
        ++ties_x;
      } else if (dy == 0.0) {
        ++ties_y;
      } else if ((dx > 0.0) == (dy > 0.0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const double denom = std::sqrt(static_cast<double>(concordant + discordant + ties_x) *
                                 static_cast<double>(concordant + discordant + ties_y));
  return std::clamp(static_cast<double>(concordant - discordant) / denom, -1.0, 1.0);
}

double kendall_tau(std::span<const double> predictions) {
  const auto order = frame_order(predictions.size());
  return kendall_tau(predictions, order);
}

void EprConfig::validate() const {
  if (!(tau > 0.0 && tau <= 1.0)) throw Error(ErrorCode::ConfigError, "epr tau must lie in (0,1]");
  if (k_max < 1) throw Error(ErrorCode::ConfigError, "epr k_max must be >= 1");
}

EprResult epr(std::span<const double> predictions, const EprConfig& config) {
  config.validate();
  if (predictions.empty()) throw Error(ErrorCode::EmptyPredictions, "epr needs at least one prediction");
  EprResult r;
  std::vector<double> values;
  values.reserve(predictions.size());
  for (double p : predictions) {
    if (p < 0.0 || p > 1.0) r.clamped = true;
    values.push_back(std::clamp(p, 0.0, 1.0));
  }
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  const double distinct = static_cast<double>(values.size());

  for (int k = 1; k <= config.k_max; ++k) {
    // occupancy never exceeds the distinct count, so no larger k can satisfy
    if (distinct < config.tau * k) break;
    long long occupied = 0;
    long long prev_bin = -1;
    for (double p : values) {
      const long long bin = std::min(static_cast<long long>(std::floor(p * k)), static_cast<long long>(k - 1));
      if (bin != prev_bin) {
        ++occupied;
        prev_bin = bin;
      }
    }
    if (static_cast<double>(occupied) >= config.tau * k) r.k = k;
  }
  r.value = std::log2(static_cast<double>(r.k));
  return r;
}

std::vector<bool> success_labels(std::span<const double> values, double threshold) {
  std::vector<bool> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(v >= threshold);
  return out;
}

MccResult mcc(const std::vector<bool>& predicted, const std::vector<bool>& actual) {
  require_same_length(predicted.size(), actual.size(), "mcc");
  MccResult r;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] && actual[i]) ++r.tp;
    else if (!predicted[i] && !actual[i]) ++r.tn;
    else if (predicted[i]) ++r.fp;
    else ++r.fn;
  }
  const double denom = std::sqrt(static_cast<double>(r.tp + r.fp) * (r.tp + r.fn) * (r.tn + r.fp) * (r.tn + r.fn));
  if (denom == 0.0) {
    r.degenerate = true;
    return r;
  }
  r.value = (static_cast<double>(r.tp) * r.tn - static_cast<double>(r.fp) * r.fn) / denom;
  return r;
}

int earliest_argmax(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::EmptyPredictions, "argmax of an empty series");
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

MaeFailResult mae_fail(std::span<const FailSeries> series) {
  if (series.empty()) throw Error(ErrorCode::EmptyInput, "mae_fail needs at least one failed trajectory");
  MaeFailResult r;
  for (const auto& s : series) {
    if (!s.t_cut) throw Error(ErrorCode::MissingCutoff, s.trajectory_id + " has no t_cut");
    FailTrajectoryResult t;
    t.trajectory_id = s.trajectory_id;
    if (!s.frame_ids.empty()) require_same_length(s.frame_ids.size(), s.predictions.size(), "mae_fail frame ids");
    const int best = earliest_argmax(s.predictions);
    t.t_star = s.frame_ids.empty() ? best : s.frame_ids[best];
    t.t_cut = *s.t_cut;
    t.error = std::abs(static_cast<double>(t.t_star - t.t_cut));
    const int length = s.num_frames > 0 ? s.num_frames : static_cast<int>(s.predictions.size());
    t.normalized_error = t.error / static_cast<double>(length);
    r.mae += t.error;
    r.normalized_mae += t.normalized_error;
    r.per_trajectory.push_back(std::move(t));
  }
  r.mae /= static_cast<double>(series.size());
  r.normalized_mae /= static_cast<double>(series.size());
  return r;
}

double progress_mae(std::span<const double> predictions, std::span<const double> ground_truth) {
  require_same_length(predictions.size(), ground_truth.size(), "progress_mae");
  if (predictions.empty()) throw Error(ErrorCode::EmptyPredictions, "progress_mae of empty series");
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) sum += std::abs(predictions[i] - ground_truth[i]);
  return sum / static_cast<double>(predictions.size());
}

double latency_harness(const std::function<void(const std::string&)>& evaluate,
                       const std::vector<std::string>& trajectories) {
  if (trajectories.empty()) throw Error(ErrorCode::EmptyInput, "latency harness needs at least one trajectory");
  evaluate(trajectories.front());
  const auto start = std::chrono::steady_clock::now();
  for (const auto& t : trajectories) evaluate(t);
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  return elapsed.count() / static_cast<double>(trajectories.size());
}

namespace {

template <typename T>
void seeded_shuffle(std::vector<T>& items, std::mt19937_64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[rng() % i]);
}

}  // namespace

HumanEvalBundle human_eval_export(const std::map<std::string, std::map<std::string, std::string>>& outputs,
                                  std::uint64_t seed) {
  if (outputs.empty()) throw Error(ErrorCode::EmptyInput, "no model outputs to export");
  const auto& reference = outputs.begin()->second;
  for (const auto& [model, samples] : outputs) {
    bool same = samples.size() == reference.size();
    for (auto a = samples.begin(), b = reference.begin(); same && a != samples.end(); ++a, ++b) same = a->first == b->first;
    if (!same) {
      throw Error(ErrorCode::KeyMismatch, "model `" + model + "` and `" + outputs.begin()->first +
                                              "` have different sample keys");
    }
  }
  HumanEvalBundle bundle;
  bundle.seed = seed;
  std::mt19937_64 rng(seed);
  std::vector<std::string> models;
  for (const auto& [model, _] : outputs) models.push_back(model);
  seeded_shuffle(models, rng);
  std::map<std::string, std::string> code_of;
  for (std::size_t i = 0; i < models.size(); ++i) {
    std::string code = "system_";
    for (std::size_t v = i;; v = v / 26 - 1) {
      code.insert(code.begin() + 7, static_cast<char>('A' + v % 26));
      if (v < 26) break;
    }
    code_of[models[i]] = code;
    bundle.answer_key[code] = models[i];
  }
  for (const auto& [key, _] : reference) {
    std::vector<std::pair<std::string, std::string>> shown;
    for (const auto& [model, samples] : outputs) shown.emplace_back(code_of[model], samples.at(key));
    seeded_shuffle(shown, rng);
    bundle.entries.emplace_back(key, std::move(shown));
  }
  return bundle;
}

nlohmann::ordered_json HumanEvalBundle::bundle_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["entries"] = nlohmann::ordered_json::array();
  for (const auto& [key, shown] : entries) {
    nlohmann::ordered_json e;
    e["sample"] = key;
    e["outputs"] = nlohmann::ordered_json::array();
    for (const auto& [code, text] : shown) e["outputs"].push_back({{"system", code}, {"output", text}});
    j["entries"].push_back(std::move(e));
  }
  return j;
}

nlohmann::ordered_json HumanEvalBundle::key_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["systems"] = nlohmann::ordered_json::object();
  for (const auto& [code, model] : answer_key) j["systems"][code] = model;
  return j;
}

}  // namespace progkit
