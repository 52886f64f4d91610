#include "commands.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <functional>
#include <memory>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "progkit/backend.hpp"
#include "progkit/error.hpp"
#include "progkit/feature_io.hpp"
#include "progkit/jsonl.hpp"
#include "progkit/metrics.hpp"
#include "progkit/pipeline.hpp"
#include "progkit/progress.hpp"
#include "progkit/remote_backend.hpp"
#include "progkit/splits.hpp"
#include "progkit/synth.hpp"
#include "progkit/vqa.hpp"

namespace progkit::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
}

std::string dump_report(const ordered_json& j) { return j.dump(2) + "\n"; }

DiffMetric parse_diff_metric(const std::string& s) {
  if (s == "l1") return DiffMetric::L1;
  if (s == "l2") return DiffMetric::L2;
  throw Error(ErrorCode::ConfigError, "diff metric must be l1 or l2, got `" + s + "`");
}

// Flat key=value config: keys mirror long flag names ('_' or '-'), flags on
// the command line win over the file.
void apply_config_file(CLI::App& sub, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read config file " + path);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(in);
  } catch (const CLI::Error& e) {
    throw Error(ErrorCode::ConfigError, path + ": " + e.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    if (!item.parents.empty()) throw Error(ErrorCode::ConfigError, path + ": sections are not supported (`" + item.fullname() + "`)");
    std::string name = item.name;
    std::replace(name.begin(), name.end(), '_', '-');
    if (name == "config") continue;
    CLI::Option* opt = sub.get_option_no_throw("--" + name);
    if (opt == nullptr) throw Error(ErrorCode::ConfigError, path + ": unknown key `" + item.name + "` for " + sub.get_name());
    if (opt->count() > 0) continue;
    try {
      opt->add_result(item.inputs);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw Error(ErrorCode::ConfigError, path + ": bad value for `" + item.name + "`: " + e.what());
    }
  }
}

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string log_level = "info";
};

void add_common(CLI::App& sub, Common& c) {
  sub.add_option("--config", c.config, "Flat key=value file; keys are long flag names");
  sub.add_option("--seed", c.seed, "Seed for every randomized choice");
  sub.add_option("--log-level", c.log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
}

struct PipelineFlags {
  PipelineConfig cfg;
  std::string diff_metric = "l2";
  int retry_attempts = 3;
  int retry_backoff_ms = 50;
  std::vector<double> latency_ms{0, 0, 0, 0};
  double jitter = 0.0;
};

void add_pipeline_flags(CLI::App& sub, PipelineFlags& p) {
  sub.add_option("--queue-capacity", p.cfg.queue_capacity, "Capacity of every inter-stage queue");
  sub.add_option("--preprocessor-workers", p.cfg.preprocessor_workers, "Preprocessing threads");
  sub.add_option("--annotator-concurrency", p.cfg.annotator_concurrency, "Concurrent annotator workers");
  sub.add_option("--dedup-threshold", p.cfg.dedup_threshold, "Keyframe threshold as a fraction of the largest step change");
  sub.add_option("--retry-attempts", p.retry_attempts, "Attempts per empty annotator response");
  sub.add_option("--retry-backoff-ms", p.retry_backoff_ms, "Base of the exponential retry backoff");
  sub.add_option("--plan-frames", p.cfg.plan_sample_frames, "Frames shown to the planner");
  sub.add_option("--segment-frames", p.cfg.segment_sample_frames, "Indexed frames shown for segmentation");
  sub.add_flag("--anchor-span-starts,!--no-anchor-span-starts", p.cfg.anchor_span_starts, "Add each span's first frame as a keyframe");
  sub.add_option("--pixel-grid", p.cfg.pixel_grid, "Grid size of the grayscale image features");
  sub.add_option("--diff-metric", p.diff_metric, "l1 or l2")->check(CLI::IsMember({"l1", "l2"}));
  sub.add_option("--sim-latency-ms", p.latency_ms, "Simulated read, preprocess, annotate, consume latency")->expected(4);
  sub.add_option("--sim-jitter", p.jitter, "Relative jitter of simulated latencies");
}

PipelineConfig resolve_pipeline(const PipelineFlags& p, std::uint64_t seed) {
  PipelineConfig cfg = p.cfg;
  cfg.diff_metric = parse_diff_metric(p.diff_metric);
  cfg.retry = {p.retry_attempts, std::chrono::milliseconds(p.retry_backoff_ms)};
  cfg.seed = seed;
  auto us = [](double ms) { return std::chrono::microseconds(static_cast<long long>(ms * 1000.0)); };
  cfg.simulated = {us(p.latency_ms[0]), us(p.latency_ms[1]), us(p.latency_ms[2]), us(p.latency_ms[3]), p.jitter};
  cfg.validate();
  return cfg;
}

std::vector<std::string> missing_ids(const std::set<std::string>& a, const std::set<std::string>& b) {
  std::vector<std::string> out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i > 0 ? sep : "") + items[i];
  return out;
}

std::vector<std::string> split_list(const std::vector<std::string>& raw) {
  std::vector<std::string> out;
  for (const auto& r : raw) {
    std::stringstream ss(r);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) out.push_back(item);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

struct SynthFlags {
  SynthConfig cfg;
  std::string out;
  std::vector<int> subtasks_range{1, 4};
  std::vector<int> frames_range{40, 160};
};

int cmd_synth(SynthFlags& f, const Common& c, std::ostream& out) {
  f.cfg.seed = c.seed;
  f.cfg.min_subtasks = f.subtasks_range[0];
  f.cfg.max_subtasks = f.subtasks_range[1];
  f.cfg.min_frames = f.frames_range[0];
  f.cfg.max_frames = f.frames_range[1];
  const auto summary = write_synth_corpus(f.out, f.cfg);
  ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["command"] = "synth-corpus";
  j["episodes"] = summary.episodes;
  j["trajectories"] = summary.trajectories;
  j["frames"] = summary.frames;
  j["failures"] = summary.failures;
  out << j.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct AnnotateFlags {
  std::string input;
  std::string backend = "mock";
  std::string out;
  std::string quarantine;
  std::string report;
  int timeout_ms = 60'000;
  int max_in_flight = 8;
  PipelineFlags pipeline;
};

int cmd_annotate(AnnotateFlags& f, const Common& c, std::ostream& out) {
  const auto cfg = resolve_pipeline(f.pipeline, c.seed);
  std::unique_ptr<AnnotatorBackend> backend;
  if (f.backend == "remote") {
    auto remote = RemoteConfig::from_env();
    remote.timeout = std::chrono::milliseconds(f.timeout_ms);
    remote.max_in_flight = f.max_in_flight;
    backend = remote_annotator(remote);
  } else {
    backend = std::make_unique<MockBackend>(c.seed);
  }
  DirectorySource source(f.input);
  spdlog::info("annotating {} trajectories from {}", source.size(), f.input);
  auto result = run_pipeline(source, *backend, cfg);

  write_jsonl_file(f.out, result.records);
  const fs::path quarantine = f.quarantine.empty() ? fs::path(f.out + ".quarantine.jsonl") : fs::path(f.quarantine);
  write_quarantine_jsonl(quarantine, result.quarantine);
  ordered_json report;
  report["schema_version"] = kReportSchemaVersion;
  report["command"] = "annotate";
  report["backend"] = f.backend;
  report["config"] = cfg.to_json();
  report["report"] = result.report.to_json(true);
  const fs::path report_path = f.report.empty() ? fs::path(f.out + ".report.json") : fs::path(f.report);
  write_text(report_path, dump_report(report));

  for (const auto& q : result.quarantine) {
    spdlog::warn("quarantined {} at {}: {}", q.episode.trajectory_id(), q.stage, q.message);
  }
  ordered_json summary;
  summary["episodes_in"] = result.report.episodes_in;
  summary["episodes_out"] = result.report.episodes_out;
  summary["quarantined"] = result.report.quarantined;
  summary["frames_out"] = result.report.frames_out;
  out << summary.dump() << "\n";
  return result.report.quarantined == 0 ? kExitOk : kExitPartial;
}

// ---------------------------------------------------------------------------

struct ProfileFlags {
  std::string input;
  std::string out;
  PipelineFlags pipeline;
};

int cmd_profile(ProfileFlags& f, const Common& c, std::ostream& out) {
  const auto cfg = resolve_pipeline(f.pipeline, c.seed);
  MockBackend backend(c.seed);
  DirectorySource source(f.input);
  const auto result = run_pipeline(source, backend, cfg);
  const auto& r = result.report;
  auto secs = [](std::chrono::nanoseconds d) { return std::chrono::duration<double>(d).count(); };
  ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["command"] = "profile";
  j["config"] = cfg.to_json();
  j["episodes_in"] = r.episodes_in;
  j["episodes_out"] = r.episodes_out;
  j["quarantined"] = r.quarantined;
  j["frames_out"] = r.frames_out;
  j["busy_s"] = {{"read", secs(r.busy.read)},
                 {"preprocess", secs(r.busy.preprocess)},
                 {"annotate", secs(r.busy.annotate)},
                 {"consume", secs(r.busy.consume)}};
  j["busy_total_s"] = secs(r.busy.total());
  j["wall_time_s"] = secs(r.wall_time);
  j["overlap_ratio"] = r.wall_time.count() > 0 ? secs(r.busy.total()) / secs(r.wall_time) : 0.0;
  j["throughput_fps"] = r.throughput_fps;
  j["reader_blocked_pushes"] = r.reader_blocked_pushes;
  j["reader_blocked_s"] = secs(r.reader_blocked_time);
  if (!f.out.empty()) write_text(f.out, dump_report(j));
  out << j.dump(2) << "\n";
  return r.quarantined == 0 ? kExitOk : kExitPartial;
}

// ---------------------------------------------------------------------------

struct LabelFlags {
  std::string annotations;
  std::string features;
  std::string diffs;
  std::vector<double> clip{0.75, 1.25};
  double eps = 1e-6;
  std::string diff_metric = "l2";
  int pixel_grid = 16;
  std::string out;
  bool force = false;
};

int cmd_label(LabelFlags& f, const Common&, std::ostream& out) {
  ProgressConfig cfg;
  cfg.clip_lo = f.clip[0];
  cfg.clip_hi = f.clip[1];
  cfg.epsilon = f.eps;
  cfg.diff_metric = parse_diff_metric(f.diff_metric);
  cfg.validate();

  auto records = read_jsonl_file(f.annotations);
  if (!f.force) {
    for (const auto& r : records) {
      if (r.progress) {
        throw Error(ErrorCode::ConfigError, r.episode.trajectory_id() + " frame " + std::to_string(r.frame_id) +
                                                " already has progress; pass --force to overwrite");
      }
    }
  }
  auto episodes = group_episodes(records);
  std::vector<AnnotationRecord> labeled;
  int completed = 0;
  for (auto& ep : episodes) {
    const auto& ref = ep.episode;
    const fs::path rel = fs::path(ref.dataset_name) / ref.episode_id / ref.camera_key;
    std::vector<double> diffs;
    if (!f.diffs.empty()) {
      diffs = read_diffs_csv(fs::path(f.diffs) / rel / "diffs.csv");
    } else {
      diffs = frame_diffs(load_camera_features(fs::path(f.features) / rel, f.pixel_grid), cfg.diff_metric);
    }
    const auto labels = progress_labels(ep.segmentation, diffs, cfg);
    if (labels.values.size() != ep.records.size()) {
      throw Error(ErrorCode::LengthMismatch, ref.trajectory_id() + ": " + std::to_string(labels.values.size()) +
                                                 " labels for " + std::to_string(ep.records.size()) + " records");
    }
    if (labels.completed) ++completed;
    for (std::size_t t = 0; t < ep.records.size(); ++t) {
      ep.records[t].progress = labels.values[t];
      labeled.push_back(std::move(ep.records[t]));
    }
  }
  sort_records(labeled);
  write_jsonl_file(f.out, labeled);
  ordered_json j;
  j["trajectories"] = episodes.size();
  j["completed"] = completed;
  j["frames"] = labeled.size();
  out << j.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct VqaFlags {
  std::string annotations;
  std::vector<std::string> families{"a1", "a2", "b1", "b2", "c"};
  SamplingConfig sampling;
  int density = 8;
  std::string out;
};

int cmd_gen_vqa(VqaFlags& f, const Common&, std::ostream& out) {
  f.sampling.validate();
  std::vector<VqaFamily> families;
  for (const auto& code : split_list(f.families)) {
    const auto fam = family_from_code(code);
    if (std::find(families.begin(), families.end(), fam) == families.end()) families.push_back(fam);
  }
  if (families.empty()) throw Error(ErrorCode::ConfigError, "no VQA family selected");
  if (f.density < 1) throw Error(ErrorCode::ConfigError, "density must be >= 1");

  const auto episodes = group_episodes(read_jsonl_file(f.annotations));
  std::map<VqaFamily, long long> counts;
  std::map<VqaFamily, long long> skipped;
  std::vector<json> rows;
  for (const auto& ep : episodes) {
    for (auto fam : families) {
      if (fam == VqaFamily::SegWithTask || fam == VqaFamily::SegTaskFree) {
        if (ep.segmentation.valid_segments().empty()) {
          ++skipped[fam];
          continue;
        }
        rows.push_back(gen_action_segmentation(ep, fam == VqaFamily::SegWithTask, f.sampling).to_json());
        ++counts[fam];
        continue;
      }
      for (int t : density_frames(ep.episode.num_frames, f.density)) {
        try {
          VqaSample s = fam == VqaFamily::NextStep     ? gen_next_step(ep, t, f.sampling)
                        : fam == VqaFamily::FuturePlan ? gen_future_plan(ep, t, f.sampling)
                                                       : gen_progress(ep, t, f.sampling);
          rows.push_back(s.to_json());
          ++counts[fam];
        } catch (const Error& e) {
          if (e.code() != ErrorCode::NoFutureAction) throw;
          ++skipped[fam];
        }
      }
    }
  }
  write_json_lines(f.out, rows);
  ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["command"] = "gen-vqa";
  j["trajectories"] = episodes.size();
  j["counts"] = ordered_json::object();
  j["skipped"] = ordered_json::object();
  for (auto fam : families) {
    j["counts"][std::string(family_code(fam))] = counts[fam];
    j["skipped"][std::string(family_code(fam))] = skipped[fam];
  }
  out << j.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalFlags {
  std::string pred;
  std::string gt;
  std::vector<std::string> metrics;
  EprConfig epr;
  double threshold = 0.95;
  double tol = 0.05;
  bool include_endpoints = false;
  std::string seg_pred;
  std::string cutoffs;
  std::string out;
};

ordered_json optional_number(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

int cmd_eval(EvalFlags& f, const Common&, std::ostream& out) {
  f.epr.validate();
  std::vector<std::string> metrics = split_list(f.metrics);
  if (metrics.empty()) {
    metrics = {"voc", "kendall", "epr", "mcc", "progress_mae"};
    if (!f.seg_pred.empty()) metrics.push_back("bf1");
    if (!f.cutoffs.empty()) metrics.push_back("mae_fail");
  }
  static const std::set<std::string> kKnown = {"voc", "kendall", "epr", "mcc", "progress_mae", "mae_fail", "bf1"};
  for (const auto& m : metrics) {
    if (kKnown.count(m) == 0U) throw Error(ErrorCode::ConfigError, "unknown metric `" + m + "`");
  }
  auto wants = [&](const char* m) { return std::find(metrics.begin(), metrics.end(), m) != metrics.end(); };

  const auto episodes = group_episodes(read_jsonl_file(f.gt));
  const auto preds = load_progress_table(f.pred);
  std::set<std::string> gt_ids, pred_ids;
  for (const auto& ep : episodes) gt_ids.insert(ep.episode.trajectory_id());
  for (const auto& [id, _] : preds) pred_ids.insert(id);
  auto no_pred = missing_ids(gt_ids, pred_ids);
  auto no_gt = missing_ids(pred_ids, gt_ids);
  if (!no_pred.empty() || !no_gt.empty()) {
    std::string msg = "trajectories are not aligned";
    if (!no_pred.empty()) msg += "; without predictions: " + join(no_pred, ", ");
    if (!no_gt.empty()) msg += "; without ground truth: " + join(no_gt, ", ");
    throw Error(ErrorCode::KeyMismatch, msg);
  }

  ordered_json report;
  report["schema_version"] = kReportSchemaVersion;
  report["command"] = "eval";
  report["config"] = {{"metrics", metrics},
                      {"tau", f.epr.tau},
                      {"k_max", f.epr.k_max},
                      {"threshold", f.threshold},
                      {"tol", f.tol},
                      {"include_endpoints", f.include_endpoints}};
  report["trajectories"] = episodes.size();
  ordered_json results = ordered_json::object();

  struct Series {
    std::string id;
    std::vector<int> frames;
    std::vector<double> pred;
    std::vector<double> gt;  // NaN-free only when labels exist
    bool has_gt = true;
    int num_frames = 0;
    bool gt_success = false;
  };
  std::vector<Series> series;
  for (const auto& ep : episodes) {
    Series s;
    s.id = ep.episode.trajectory_id();
    s.num_frames = ep.episode.num_frames;
    s.gt_success = ep.records.back().completion != CompletionState::GivenUp;
    for (const auto& [frame, value] : preds.at(s.id)) {
      if (frame < 0 || frame >= s.num_frames) {
        throw Error(ErrorCode::KeyMismatch, s.id + ": predicted frame " + std::to_string(frame) + " not in ground truth");
      }
      s.frames.push_back(frame);
      s.pred.push_back(value);
      const auto& label = ep.records[frame].progress;
      if (label) s.gt.push_back(*label);
      else s.has_gt = false;
    }
    series.push_back(std::move(s));
  }

  auto ordering_metric = [&](const char* name, double (*fn)(std::span<const double>, std::span<const double>)) {
    ordered_json per = ordered_json::object();
    std::vector<std::string> degenerate;
    double sum = 0.0;
    int n = 0;
    for (const auto& s : series) {
      std::vector<double> order(s.frames.begin(), s.frames.end());
      try {
        const double v = fn(s.pred, order);
        per[s.id] = v;
        sum += v;
        ++n;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::DegenerateVariance) throw;
        per[s.id] = nullptr;
        degenerate.push_back(s.id);
      }
    }
    ordered_json m;
    m["mean"] = n > 0 ? ordered_json(sum / n) : ordered_json(nullptr);
    m["n"] = n;
    m["degenerate"] = degenerate;
    m["per_trajectory"] = std::move(per);
    results[name] = std::move(m);
  };
  if (wants("voc")) ordering_metric("voc", [](std::span<const double> p, std::span<const double> g) { return voc(p, g); });
  if (wants("kendall")) {
    ordering_metric("kendall", [](std::span<const double> p, std::span<const double> g) { return kendall_tau(p, g); });
  }
  if (wants("epr")) {
    ordered_json per = ordered_json::object();
    double sum = 0.0;
    std::vector<double> pooled;
    bool clamped = false;
    for (const auto& s : series) {
      const auto r = epr(s.pred, f.epr);
      per[s.id] = r.value;
      sum += r.value;
      clamped = clamped || r.clamped;
      pooled.insert(pooled.end(), s.pred.begin(), s.pred.end());
    }
    ordered_json m;
    m["mean"] = series.empty() ? ordered_json(nullptr) : ordered_json(sum / series.size());
    m["pooled"] = pooled.empty() ? ordered_json(nullptr) : ordered_json(epr(pooled, f.epr).value);
    m["clamped"] = clamped;
    m["per_trajectory"] = std::move(per);
    results["epr"] = std::move(m);
  }
  if (wants("progress_mae")) {
    ordered_json per = ordered_json::object();
    double sum = 0.0;
    for (const auto& s : series) {
      if (!s.has_gt) throw Error(ErrorCode::MissingLabels, s.id + ": ground truth has no progress labels");
      const double v = progress_mae(s.pred, s.gt);
      per[s.id] = v;
      sum += v;
    }
    ordered_json m;
    m["mean"] = series.empty() ? ordered_json(nullptr) : ordered_json(sum / series.size());
    m["per_trajectory"] = std::move(per);
    results["progress_mae"] = std::move(m);
  }
  if (wants("mcc")) {
    std::vector<bool> predicted, actual;
    for (const auto& s : series) {
      predicted.push_back(s.pred.back() >= f.threshold);
      actual.push_back(s.gt_success);
    }
    const auto r = mcc(predicted, actual);
    results["mcc"] = {{"value", r.value}, {"degenerate", r.degenerate}, {"tp", r.tp}, {"tn", r.tn}, {"fp", r.fp}, {"fn", r.fn}};
  }
  if (wants("mae_fail")) {
    if (f.cutoffs.empty()) throw Error(ErrorCode::MissingCutoff, "mae_fail needs --cutoffs");
    std::map<std::string, int> cut;
    for (const auto& row : read_json_lines(f.cutoffs)) cut[row.at("trajectory_id").get<std::string>()] = row.at("t_cut").get<int>();
    std::vector<FailSeries> failed;
    for (const auto& s : series) {
      if (s.gt_success) continue;
      FailSeries fs_;
      fs_.trajectory_id = s.id;
      fs_.predictions = s.pred;
      fs_.frame_ids = s.frames;
      fs_.num_frames = s.num_frames;
      if (auto it = cut.find(s.id); it != cut.end()) fs_.t_cut = it->second;
      failed.push_back(std::move(fs_));
    }
    ordered_json m;
    if (failed.empty()) {
      m["mae"] = nullptr;
      m["normalized_mae"] = nullptr;
      m["per_trajectory"] = ordered_json::object();
    } else {
      const auto r = mae_fail(failed);
      m["mae"] = r.mae;
      m["normalized_mae"] = r.normalized_mae;
      m["per_trajectory"] = ordered_json::object();
      for (const auto& t : r.per_trajectory) {
        m["per_trajectory"][t.trajectory_id] = {{"t_star", t.t_star}, {"t_cut", t.t_cut}, {"error", t.error}};
      }
    }
    results["mae_fail"] = std::move(m);
  }
  if (wants("bf1")) {
    if (f.seg_pred.empty()) throw Error(ErrorCode::ConfigError, "bf1 needs --seg-pred");
    // one segmentation per trajectory; the with-task variant wins over task-free
    std::map<std::string, json> seg_rows;
    for (const auto& row : read_json_lines(f.seg_pred)) {
      const auto fam = row.value("family", "");
      if (fam != "seg_with_task" && fam != "seg_task_free") continue;
      const auto id = row.at("trajectory_id").get<std::string>();
      auto it = seg_rows.find(id);
      if (it == seg_rows.end() || (fam == "seg_with_task" && it->second.value("family", "") != "seg_with_task")) {
        seg_rows[id] = row;
      }
    }
    ordered_json per = ordered_json::object();
    double f1_sum = 0.0, matched_sum = 0.0, nearest_sum = 0.0;
    int n = 0, matched_n = 0, nearest_n = 0, unparsable = 0;
    std::vector<std::string> missing, skipped;
    for (const auto& ep : episodes) {
      const auto id = ep.episode.trajectory_id();
      auto it = seg_rows.find(id);
      if (it == seg_rows.end()) {
        if (ep.segmentation.valid_segments().empty()) skipped.push_back(id);
        else missing.push_back(id);
        continue;
      }
      const int samples = static_cast<int>(it->second.at("images").size());
      std::vector<std::pair<int, int>> spans;
      try {
        for (const auto& item : json::parse(it->second.at("target").get<std::string>())) {
          // sampled indices back to source frames; the end keeps its transition frame
          const int T = ep.episode.num_frames;
          const int sj = item.at("start_frame").get<int>();
          const int ej = item.at("end_frame").get<int>();
          if (sj < 0 || ej < sj || ej >= samples) throw json::other_error::create(501, "span outside the sampled range", nullptr);
          const int end_src = ej + 1 < samples ? sampled_to_source(ej + 1, T, samples) - 1 : T - 1;
          spans.emplace_back(sampled_to_source(sj, T, samples), std::max(end_src, sampled_to_source(sj, T, samples)));
        }
      } catch (const json::exception&) {
        ++unparsable;
        spans.clear();
      }
      const auto gt_b = boundaries_from_segmentation(ep.segmentation, ep.episode.num_frames, f.include_endpoints);
      const auto pred_b = boundaries_from_spans(spans, ep.episode.num_frames, f.include_endpoints);
      const auto b = bf1(pred_b, gt_b, f.tol);
      const auto mm = mmae(b, pred_b, gt_b);
      per[id] = {{"f1", b.f1}, {"precision", b.precision}, {"recall", b.recall}, {"tp", b.tp}, {"fp", b.fp},
                 {"fn", b.fn}, {"matched_mae", optional_number(mm.matched_mae)},
                 {"nearest_mae", optional_number(mm.nearest_mae)}};
      f1_sum += b.f1;
      ++n;
      if (mm.matched_mae) matched_sum += *mm.matched_mae, ++matched_n;
      if (mm.nearest_mae) nearest_sum += *mm.nearest_mae, ++nearest_n;
    }
    if (!missing.empty()) throw Error(ErrorCode::KeyMismatch, "no segmentation prediction for: " + join(missing, ", "));
    ordered_json m;
    m["f1"] = n > 0 ? ordered_json(f1_sum / n) : ordered_json(nullptr);
    m["matched_mae"] = matched_n > 0 ? ordered_json(matched_sum / matched_n) : ordered_json(nullptr);
    m["nearest_mae"] = nearest_n > 0 ? ordered_json(nearest_sum / nearest_n) : ordered_json(nullptr);
    m["unparsable"] = unparsable;
    m["skipped_no_segments"] = skipped;
    m["per_trajectory"] = std::move(per);
    results["bf1"] = std::move(m);
  }
  report["metrics"] = std::move(results);
  if (!f.out.empty()) write_text(f.out, dump_report(report));
  out << report.dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SplitFlags {
  std::string tags;
  std::string mode = "succ";
  std::string out_dir;
};

int cmd_split(SplitFlags& f, const Common& c, std::ostream& out) {
  const auto tags = read_tags_csv(f.tags);
  const auto split = build_oneshot_splits(tags, split_mode_from_string(f.mode), c.seed);
  const fs::path dir(f.out_dir);
  write_text(dir / "train.txt", join(split.train, "\n") + (split.train.empty() ? "" : "\n"));
  write_text(dir / "test.txt", join(split.test, "\n") + (split.test.empty() ? "" : "\n"));
  ordered_json j;
  j["mode"] = f.mode;
  j["seed"] = c.seed;
  j["train"] = split.train.size();
  j["test"] = split.test.size();
  out << j.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct RftFlags {
  std::string progress;
  std::string tags;
  AdvantageConfig cfg;
  std::string out;
};

int cmd_rft_label(RftFlags& f, const Common&, std::ostream& out) {
  f.cfg.validate();
  const auto table = load_progress_table(f.progress);
  std::map<std::string, std::string> task_of;
  for (const auto& t : read_tags_csv(f.tags)) task_of[t.trajectory_id] = t.task;
  std::vector<TrajectoryProgress> trajectories;
  for (const auto& [id, frames] : table) {
    auto it = task_of.find(id);
    if (it == task_of.end()) throw Error(ErrorCode::InvalidTag, "no tag for trajectory " + id);
    TrajectoryProgress tp{id, it->second, {}};
    int expected = 0;
    for (const auto& [frame, value] : frames) {
      if (frame != expected++) {
        throw Error(ErrorCode::SchemaViolation, id + ": advantage labels need progress on every frame from 0");
      }
      tp.values.push_back(value);
    }
    trajectories.push_back(std::move(tp));
  }
  const auto labels = rft_advantage_labels(trajectories, f.cfg);
  std::vector<json> rows;
  std::map<std::string, std::pair<long long, long long>> per_task;
  for (const auto& l : labels) {
    rows.push_back({{"trajectory_id", l.trajectory_id},
                    {"t", l.t},
                    {"advantage", l.advantage},
                    {"label", l.positive ? "positive" : "negative"}});
    auto& [pos, total] = per_task[l.task];
    pos += l.positive ? 1 : 0;
    ++total;
  }
  write_json_lines(f.out, rows);
  ordered_json j;
  j["samples"] = labels.size();
  j["tasks"] = ordered_json::object();
  for (const auto& [task, counts] : per_task) j["tasks"][task] = {{"positive", counts.first}, {"samples", counts.second}};
  out << j.dump() << "\n";
  return kExitOk;
}

void emit_error(std::ostream& err, const std::string& code, const std::string& message) {
  err << json{{"error", code}, {"message", message}}.dump() << "\n";
}

}  // namespace

ProgressTable load_progress_table(const fs::path& path) {
  ProgressTable table;
  std::size_t line = 0;
  auto put = [&](const std::string& id, int frame, double value) {
    if (!table[id].emplace(frame, value).second) {
      throw Error(ErrorCode::SchemaViolation,
                  path.string() + " line " + std::to_string(line) + ": duplicate progress for " + id + " frame " + std::to_string(frame));
    }
  };
  for (const auto& row : read_json_lines(path)) {
    ++line;
    if (row.contains("family")) {
      if (row["family"] != "progress") continue;
      put(row.at("trajectory_id").get<std::string>(), row.at("frame_id").get<int>(),
          parse_progress_tag(row.at("target").get<std::string>()).value);
    } else if (row.contains("dataset_name")) {
      const auto rec = record_from_json(row, line);
      if (rec.progress) put(rec.episode.trajectory_id(), rec.frame_id, *rec.progress);
    } else {
      if (!row.contains("trajectory_id") || !row.contains("frame_id") || !row.contains("progress") ||
          !row["progress"].is_number()) {
        throw Error(ErrorCode::SchemaViolation, path.string() + " line " + std::to_string(line) +
                                                    ": expected {trajectory_id, frame_id, progress}");
      }
      put(row["trajectory_id"].get<std::string>(), row["frame_id"].get<int>(), row["progress"].get<double>());
    }
  }
  return table;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  // stdout carries results only
  static const auto logger = [] {
    auto l = spdlog::stderr_color_mt("progkit");
    spdlog::set_default_logger(l);
    return l;
  }();
  (void)logger;
  CLI::App app("Procedure-grounded progress labels: annotation, labeling, VQA generation and evaluation", "progkit");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  Common common;
  std::function<int()> action;
  auto bind = [&](CLI::App* sub, auto& flags, auto fn) {
    add_common(*sub, common);
    sub->callback([&, sub, fn] {
      if (!common.config.empty()) apply_config_file(*sub, common.config);
      spdlog::set_level(spdlog::level::from_str(common.log_level));
      spdlog::info("{} resolved config:\n{}", sub->get_name(), sub->config_to_str(true, false));
      action = [&, fn] { return fn(flags, common, out); };
    });
  };

  SynthFlags synth;
  auto* s = app.add_subcommand("synth-corpus", "Write a scripted synthetic corpus with known segments");
  s->add_option("--out", synth.out, "Corpus root directory")->required();
  s->add_option("--episodes", synth.cfg.episodes, "Number of episodes");
  s->add_option("--subtasks-range", synth.subtasks_range, "Min and max subtasks per task")->expected(2);
  s->add_option("--frames-range", synth.frames_range, "Min and max frames per episode")->expected(2);
  s->add_option("--feature-dim", synth.cfg.feature_dim, "Feature vector length");
  s->add_option("--tasks", synth.cfg.tasks, "Number of distinct tasks");
  s->add_option("--failure-rate", synth.cfg.failure_rate, "Fraction of failed episodes");
  s->add_option("--failure-types", synth.cfg.failure_types, "Failure type names")->delimiter(',');
  s->add_option("--cameras", synth.cfg.cameras, "Camera keys")->delimiter(',');
  s->add_option("--dataset", synth.cfg.dataset, "Dataset directory name");
  s->add_option("--fault-rate", synth.cfg.fault_rate, "Fraction of episodes scripted to fail annotation");
  s->add_flag("--png", synth.cfg.write_png, "Write PNG frames instead of features.bin");
  s->add_option("--png-size", synth.cfg.png_size, "PNG width and height");
  bind(s, synth, cmd_synth);

  AnnotateFlags annotate;
  auto* a = app.add_subcommand("annotate", "Run the staged annotation pipeline over a corpus");
  a->add_option("--input", annotate.input, "Corpus root (<dataset>/<episode>/<camera>)")->required();
  a->add_option("--backend", annotate.backend, "mock or remote")->check(CLI::IsMember({"mock", "remote"}));
  a->add_option("--out", annotate.out, "Annotation JSONL")->required();
  a->add_option("--quarantine", annotate.quarantine, "Quarantine JSONL (default <out>.quarantine.jsonl)");
  a->add_option("--report", annotate.report, "Run report JSON (default <out>.report.json)");
  a->add_option("--timeout-ms", annotate.timeout_ms, "Remote request timeout");
  a->add_option("--max-in-flight", annotate.max_in_flight, "Concurrent remote requests");
  add_pipeline_flags(*a, annotate.pipeline);
  bind(a, annotate, cmd_annotate);

  ProfileFlags profile;
  profile.pipeline.latency_ms = {5, 10, 20, 5};
  auto* p = app.add_subcommand("profile", "Run the pipeline with the mock annotator and report stage busy times");
  p->add_option("--input", profile.input, "Corpus root")->required();
  p->add_option("--out", profile.out, "Profile report JSON");
  add_pipeline_flags(*p, profile.pipeline);
  bind(p, profile, cmd_profile);

  LabelFlags label;
  auto* l = app.add_subcommand("label", "Fill progress labels of annotation records");
  l->add_option("--annotations", label.annotations, "Annotation JSONL")->required();
  auto* feat = l->add_option("--features", label.features, "Corpus root holding features.bin or PNG frames");
  auto* diffs = l->add_option("--diffs", label.diffs, "Root holding <dataset>/<episode>/<camera>/diffs.csv");
  feat->excludes(diffs);
  l->add_option("--clip", label.clip, "Budget clip bounds lo hi")->expected(2);
  l->add_option("--eps", label.eps, "Per-step stabilizer");
  l->add_option("--diff-metric", label.diff_metric, "l1 or l2")->check(CLI::IsMember({"l1", "l2"}));
  l->add_option("--pixel-grid", label.pixel_grid, "Grid size of image features");
  l->add_option("--out", label.out, "Labeled annotation JSONL")->required();
  l->add_flag("--force", label.force, "Overwrite existing progress values");
  bind(l, label, [](LabelFlags& f, const Common& c, std::ostream& o) {
    if (f.features.empty() == f.diffs.empty()) throw Error(ErrorCode::ConfigError, "exactly one of --features or --diffs is required");
    return cmd_label(f, c, o);
  });

  VqaFlags vqa;
  auto* v = app.add_subcommand("gen-vqa", "Generate VQA samples from labeled annotations");
  v->add_option("--annotations", vqa.annotations, "Annotation JSONL")->required();
  v->add_option("--families", vqa.families, "Comma-separated subset of a1,a2,b1,b2,c")->delimiter(',');
  v->add_option("--fps", vqa.sampling.fps, "Sampling rate");
  v->add_option("--source-fps", vqa.sampling.source_fps, "Recording rate of the trajectories");
  v->add_option("--max-frames", vqa.sampling.max_frames, "Frame cap of segmentation samples");
  v->add_option("--window", vqa.sampling.window, "Observation window of next-step, plan and progress samples");
  v->add_option("--min-pixels", vqa.sampling.min_pixels, "Minimum image area");
  v->add_option("--max-pixels", vqa.sampling.max_pixels, "Maximum image area");
  v->add_option("--image-root", vqa.sampling.image_root, "Prefix of image paths");
  v->add_option("--density", vqa.density, "Anchor frames per trajectory for window families");
  v->add_option("--out", vqa.out, "Sample JSONL")->required();
  bind(v, vqa, cmd_gen_vqa);

  EvalFlags eval;
  auto* e = app.add_subcommand("eval", "Evaluate progress and segmentation predictions");
  e->add_option("--pred", eval.pred, "Predictions: {trajectory_id, frame_id, progress} rows, annotations or VQA samples")->required();
  e->add_option("--gt", eval.gt, "Labeled annotation JSONL")->required();
  e->add_option("--metrics", eval.metrics, "Subset of voc,kendall,epr,mcc,progress_mae,mae_fail,bf1")->delimiter(',');
  e->add_option("--tau", eval.epr.tau, "EPR occupancy threshold");
  e->add_option("--k-max", eval.epr.k_max, "Largest EPR bin count scanned");
  e->add_option("--threshold", eval.threshold, "Success threshold for MCC");
  e->add_option("--tol", eval.tol, "Boundary tolerance as a fraction of the sequence");
  e->add_flag("--include-endpoints", eval.include_endpoints, "Count first and last frames as boundaries");
  e->add_option("--seg-pred", eval.seg_pred, "Segmentation predictions in VQA sample format");
  e->add_option("--cutoffs", eval.cutoffs, "JSONL of {trajectory_id, t_cut} for failed trajectories");
  e->add_option("--out", eval.out, "Report JSON");
  bind(e, eval, cmd_eval);

  SplitFlags split;
  auto* sp = app.add_subcommand("split", "Build one-shot train/test splits from trajectory tags");
  sp->add_option("--tags", split.tags, "Tags CSV")->required();
  sp->add_option("--mode", split.mode, "succ or succ_fail")->check(CLI::IsMember({"succ", "succ_fail"}));
  sp->add_option("--out-dir", split.out_dir, "Directory for train.txt and test.txt")->required();
  bind(sp, split, cmd_split);

  RftFlags rft;
  auto* r = app.add_subcommand("rft-label", "Label steps by top-fraction forward advantage per task");
  r->add_option("--progress", rft.progress, "Per-frame progress (predictions, annotations or VQA samples)")->required();
  r->add_option("--tags", rft.tags, "Tags CSV mapping trajectories to tasks")->required();
  r->add_option("--horizon", rft.cfg.horizon, "Advantage horizon in steps");
  r->add_option("--top-fraction", rft.cfg.top_fraction, "Fraction labeled positive per task");
  r->add_flag("--per-trajectory", rft.cfg.per_trajectory, "Rank trajectories by mean advantage");
  r->add_option("--out", rft.out, "Advantage label JSONL")->required();
  bind(r, rft, cmd_rft_label);

  std::vector<std::string> argv_storage(args.begin(), args.end());
  if (argv_storage.empty()) argv_storage.emplace_back("progkit");
  std::vector<char*> argv;
  for (auto& a_ : argv_storage) argv.push_back(a_.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& pe) {
    if (pe.get_exit_code() == 0) {
      const auto subs = app.get_subcommands();
      out << (subs.empty() ? app.help() : subs.front()->help());
      return kExitOk;
    }
    emit_error(err, "UsageError", pe.what());
    return kExitFatal;
  } catch (const Error& ex) {
    emit_error(err, std::string(to_string(ex.code())), ex.what());
    return kExitFatal;
  }
  try {
    return action ? action() : kExitFatal;
  } catch (const Error& ex) {
    emit_error(err, std::string(to_string(ex.code())), ex.what());
    return kExitFatal;
  } catch (const std::exception& ex) {
    emit_error(err, "InternalError", ex.what());
    return kExitFatal;
  }
}

}  // namespace progkit::cli
