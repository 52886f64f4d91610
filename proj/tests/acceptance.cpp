// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "../tools/commands.hpp"
#include "oracles.hpp"
#include "progkit/error.hpp"
#include "progkit/jsonl.hpp"
#include "progkit/metrics.hpp"
#include "progkit/pipeline.hpp"
#include "progkit/progress.hpp"
#include "progkit/splits.hpp"
#include "progkit/synth.hpp"
#include "progkit/vqa.hpp"

using namespace progkit;
namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(const char* name, bool ok, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

SubtaskSegment seg_span(int id, int s, int e) {
  SubtaskSegment x;
  x.id = id;
  x.name = "step " + std::to_string(id);
  x.start_frame = s;
  x.complete_frame = e;
  return x;
}

// ---------------------------------------------------------------------------

void progress_oracle() {
  std::mt19937_64 rng(2024);
  std::vector<oracle::RandomTrajectory> fixtures;
  for (int i = 0; i < 1000; ++i) fixtures.push_back(oracle::random_trajectory(rng, 10, 500));
  double worst = 0.0;
  int kmin = 99, kmax = 0;
  const auto t0 = Clock::now();
  std::vector<ProgressLabels> labels;
  labels.reserve(fixtures.size());
  for (const auto& f : fixtures) labels.push_back(progress_labels(f.seg, f.diffs));
  const double lib_s = seconds_since(t0);
  for (std::size_t i = 0; i < fixtures.size(); ++i) {
    const auto want = oracle::progress(fixtures[i].seg, fixtures[i].diffs);
    for (std::size_t t = 0; t < want.size(); ++t) worst = std::max(worst, std::abs(want[t] - labels[i].values[t]));
    const int K = static_cast<int>(fixtures[i].seg.subtasks.size());
    kmin = std::min(kmin, K);
    kmax = std::max(kmax, K);
  }
  std::ostringstream d;
  d << "1000 trajectories, K in [" << kmin << "," << kmax << "], max |lib - oracle| = " << worst << ", library time "
    << lib_s << " s";
  report("progress-formula oracle", worst <= 1e-9 && lib_s < 10.0, d.str());
}

void budget_exactness() {
  std::mt19937_64 rng(77);
  double worst = 0.0;
  int checked = 0;
  for (int i = 0; i < 500; ++i) {
    const auto f = oracle::random_trajectory(rng, 10, 500, false);
    const auto labels = progress_labels(f.seg, f.diffs);
    const int T = static_cast<int>(f.diffs.size()) + 1;
    const int K = static_cast<int>(f.seg.subtasks.size());
    double W = 0.0;
    for (const auto& s : f.seg.subtasks) W += oracle::clip(double(K) * (*s.complete_frame - *s.start_frame + 1) / T, 0.75, 1.25);
    for (const auto& s : f.seg.subtasks) {
      const double w = oracle::clip(double(K) * (*s.complete_frame - *s.start_frame + 1) / T, 0.75, 1.25);
      const double inc = labels.values[*s.complete_frame] - labels.values[*s.start_frame];
      worst = std::max(worst, std::abs(inc - w / W));
      ++checked;
    }
  }
  SegmentationResult seg;
  seg.task = "t";
  seg.subtasks = {seg_span(1, 0, 24), seg_span(2, 25, 99)};
  const auto w = subtask_weights(seg.subtasks, 100);
  const bool clip_ok = w.at(1) == 0.75 && w.at(2) == 1.25;
  const auto l = progress_labels(seg, std::vector<double>(99, 1.0));
  const double split = std::abs(l.values[24] - 0.375);
  std::ostringstream d;
  d << checked << " segment increments, max |inc - w/W| = " << worst << "; 25/75 weights (" << w.at(1) << ", " << w.at(2)
    << "), label at first boundary off by " << split;
  report("budget exactness", worst <= 1e-9 && clip_ok && split <= 1e-9, d.str());
}

void time_reduction() {
  double worst = 0.0;
  for (int T : {2, 3, 10, 57, 100, 500, 1000}) {
    for (double c : {0.0, 0.5, 3.0}) {
      SegmentationResult seg;
      seg.task = "t";
      seg.subtasks = {seg_span(1, 0, T - 1)};
      const auto l = progress_labels(seg, std::vector<double>(T - 1, c));
      for (int t = 0; t < T; ++t) worst = std::max(worst, std::abs(l.values[t] - double(t) / (T - 1)));
    }
  }
  report("time-interpolation reduction", worst <= 1e-12, "K=1 constant diffs, max |p - t/(T-1)| = " + fmt("%.3g", worst));
}

void epr_fixtures() {
  const double constant = epr(std::vector<double>(37, 0.61)).value;
  const double anchors = epr(std::vector<double>{0.25, 0.5, 0.75, 1.0}, {0.5, 4096}).value;
  std::mt19937_64 rng(5);
  int violations = 0;
  for (int i = 0; i < 500; ++i) {
    const int n = std::uniform_int_distribution<int>(1, 300)(rng);
    const int q = std::uniform_int_distribution<int>(1, 64)(rng);
    std::vector<double> p(n);
    for (auto& v : p) v = std::round(std::uniform_real_distribution<double>(0, 1)(rng) * q) / q;
    if (epr(p).value > std::log2(double(n)) + 1.0 + 1e-12) ++violations;
  }
  std::ostringstream d;
  d << "constant " << constant << ", anchors " << anchors << ", bound violations " << violations << "/500";
  report("EPR fixtures", constant == 1.0 && anchors == 3.0 && violations == 0, d.str());
}

// Exact maximum matching for points on a line with |p - g| <= tol: scanning
// both sorted lists and pairing each gt with the earliest reachable pred.
int two_pointer_matches(const std::vector<double>& pred, const std::vector<double>& gt, double tol) {
  std::size_t i = 0;
  int m = 0;
  for (double g : gt) {
    while (i < pred.size() && pred[i] < g - tol) ++i;
    if (i < pred.size() && pred[i] <= g + tol) {
      ++m;
      ++i;
    }
  }
  return m;
}

void bf1_fixture_and_audit() {
  const BoundarySet gt{{0.30, 0.60}, 0}, pred{{0.32, 0.80}, 0};
  const auto r = bf1(pred, gt, 0.05);
  const auto m = mmae(r, pred, gt);
  const bool fixture = std::abs(r.f1 - 0.5) <= 1e-12 && m.matched_mae && std::abs(*m.matched_mae - 0.02) <= 1e-12;

  // every subset of a 20-frame grid with at most 5 boundaries
  std::vector<std::vector<double>> sets;
  for (std::uint32_t mask = 0; mask < (1U << 20); ++mask) {
    if (std::popcount(mask) > 5) continue;
    std::vector<double> s;
    for (int b = 0; b < 20; ++b)
      if (mask & (1U << b)) s.push_back(b / 19.0);
    sets.push_back(std::move(s));
  }
  // the fast exact matcher must agree with the exhaustive DP oracle
  std::mt19937_64 rng(8);
  int matcher_disagree = 0;
  for (int i = 0; i < 20000; ++i) {
    const auto& a = sets[rng() % sets.size()];
    const auto& b = sets[rng() % sets.size()];
    for (double tol : {0.05, 0.11})
      if (two_pointer_matches(a, b, tol + 1e-9) != oracle::optimal_matches(a, b, tol + 1e-9)) ++matcher_disagree;
  }
  const auto t0 = Clock::now();
  long long pairs = 0, divergent = 0, worst_gap = 0;
  BoundarySet p, g;
  for (const auto& gs : sets) {
    g.positions = gs;
    for (const auto& ps : sets) {
      p.positions = ps;
      const int greedy = bf1(p, g, 0.05).tp;
      const int best = two_pointer_matches(ps, gs, 0.05 + 1e-9);
      ++pairs;
      if (greedy != best) {
        ++divergent;
        worst_gap = std::max<long long>(worst_gap, best - greedy);
      }
    }
  }
  std::ostringstream d;
  d << "F1 " << r.f1 << ", matched_mae " << (m.matched_mae ? *m.matched_mae : -1.0) << "; audit " << sets.size()
    << " sets, " << pairs << " pairs at tol 0.05 in " << seconds_since(t0) << " s, greedy divergences " << divergent
    << " (max tp gap " << worst_gap << "), matcher/oracle disagreements " << matcher_disagree;
  report("BF1/mMAE fixture + greedy audit", fixture && matcher_disagree == 0 && worst_gap <= 1, d.str());
}

void voc_kt() {
  const std::vector<double> fx{0.1, 0.3, 0.2, 0.4};
  const double rho = voc(fx), tau = kendall_tau(fx);
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  int series = 0;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> p(std::uniform_int_distribution<int>(3, 80)(rng));
    for (auto& v : p) v = std::round(u(rng) * 20) / 20;  // ties included
    if (std::all_of(p.begin(), p.end(), [&](double v) { return v == p[0]; })) p[0] += 0.5;
    const double r0 = voc(p), k0 = kendall_tau(p);
    ++series;
    for (int j = 0; j < 3; ++j) {
      const double a = 0.1 + 5 * u(rng), b = u(rng) * 3 - 1.5, c = 0.5 + 3 * u(rng);
      std::vector<double> q(p.size());
      const int kind = j;
      std::transform(p.begin(), p.end(), q.begin(), [&](double x) {
        if (kind == 0) return a * x + b;
        if (kind == 1) return std::exp(c * x) + b;
        return a * x * x * x + c * x + std::atan(x);
      });
      worst = std::max({worst, std::abs(voc(q) - r0), std::abs(kendall_tau(q) - k0)});
    }
  }
  std::ostringstream d;
  d << "rho " << rho << ", tau " << tau << "; " << series << " series x 3 transforms, max drift " << worst;
  report("VOC/KT", std::abs(rho - 0.8) <= 1e-12 && std::abs(tau - 2.0 / 3.0) <= 1e-12 && worst <= 1e-12, d.str());
}

void mae_fail_checks() {
  const auto a = mae_fail(std::vector<FailSeries>{{"a", {0.1, 0.4, 0.7, 0.7, 0.5}, 3}});
  const auto b = mae_fail(std::vector<FailSeries>{{"b", {0.1, 0.2, 0.3}, 0}});
  const auto c = mae_fail(std::vector<FailSeries>{{"c", {0.4, 0.4, 0.4, 0.4}, 2}});
  const bool fixtures = a.per_trajectory[0].t_star == 2 && a.mae == 1.0 && b.per_trajectory[0].t_star == 2 &&
                        b.mae == 2.0 && c.per_trajectory[0].t_star == 0 && c.mae == 2.0;
  std::mt19937_64 rng(13);
  int broken = 0;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> p(std::uniform_int_distribution<int>(1, 100)(rng));
    for (auto& v : p) v = std::round(std::uniform_real_distribution<double>(0, 1)(rng) * 50) / 50;
    const int t = earliest_argmax(p);
    auto q = p;
    q.insert(q.begin() + std::uniform_int_distribution<long>(t + 1, static_cast<long>(q.size()))(rng), p[t]);
    if (t != oracle::earliest_argmax(p) || earliest_argmax(q) != t) ++broken;
  }
  report("MAE_fail", fixtures && broken == 0,
         std::string("fixtures ") + (fixtures ? "ok" : "wrong") + ", duplicate-max violations " + std::to_string(broken) + "/200");
}

SynthConfig pipeline_corpus(int episodes, std::uint64_t seed) {
  SynthConfig c;
  c.episodes = episodes;
  c.seed = seed;
  c.min_frames = 30;
  c.max_frames = 60;
  return c;
}

void pipeline_exactly_once() {
  auto specs = synth_specs(pipeline_corpus(200, 11));
  std::multiset<std::string> expected;
  for (const auto& s : specs) expected.insert(s.ref.trajectory_id());
  PipelineConfig cfg;
  cfg.simulated = {std::chrono::milliseconds(5), std::chrono::milliseconds(10), std::chrono::milliseconds(20),
                   std::chrono::milliseconds(5), 0.0};
  MockBackend backend(0);
  VectorSource src(specs);
  const auto out = run_pipeline(src, backend, cfg);
  std::multiset<std::string> seen;
  for (const auto& r : out.records)
    if (r.frame_id == 0) seen.insert(r.episode.trajectory_id());
  for (const auto& q : out.quarantine) seen.insert(q.episode.trajectory_id());
  const double wall = std::chrono::duration<double>(out.report.wall_time).count();
  const double busy = std::chrono::duration<double>(out.report.busy.total()).count();
  const bool once = out.report.episodes_out + out.report.quarantined == 200 && seen == expected;

  // capacity-1 stress with jittered latencies, guarded against deadlock
  auto stress_specs = synth_specs(pipeline_corpus(1000, 12));
  PipelineConfig stress;
  stress.queue_capacity = 1;
  stress.simulated = {std::chrono::microseconds(500), std::chrono::microseconds(1000), std::chrono::microseconds(2000),
                      std::chrono::microseconds(500), 0.9};
  stress.seed = 3;
  auto task = std::async(std::launch::async, [&] {
    MockBackend b(1);
    VectorSource s(stress_specs);
    return run_pipeline(s, b, stress);
  });
  const auto t0 = Clock::now();
  const bool finished = task.wait_for(std::chrono::seconds(120)) == std::future_status::ready;
  std::ostringstream d;
  d << "200 episodes: out " << out.report.episodes_out << " + quarantined " << out.report.quarantined << ", wall " << wall
    << " s (limit 6), busy " << busy << " s";
  if (!finished) {
    d << "; capacity-1 stress did not finish within 120 s";
    report("pipeline exactly-once + overlap", false, d.str());
    std::fflush(stdout);
    std::_Exit(1);
  }
  const auto so = task.get();
  const bool stress_ok = so.report.episodes_out + so.report.quarantined == 1000;
  d << "; stress 1000 episodes at capacity 1 in " << seconds_since(t0) << " s, out " << so.report.episodes_out
    << " + quarantined " << so.report.quarantined << ", blocked pushes " << so.report.reader_blocked_pushes;
  report("pipeline exactly-once + overlap", once && wall <= 6.0 && stress_ok, d.str());
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "progkit");
  args.emplace_back("--log-level");
  args.emplace_back("off");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) std::fprintf(stderr, "cli %s exited %d: %s\n", args[1].c_str(), code, err.str().c_str());
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void mock_determinism() {
  const fs::path root = fs::temp_directory_path() / "progkit_acceptance_determinism";
  fs::remove_all(root);
  int bad_exit = 0;
  for (const char* run : {"a", "b"}) {
    const fs::path d = root / run;
    fs::create_directories(d);
    const auto p = [&](const char* name) { return (d / name).string(); };
    bad_exit += run_cli({"synth-corpus", "--out", p("corpus"), "--episodes", "16", "--seed", "21", "--failure-rate", "0.4",
                         "--frames-range", "40", "120"}) != 0;
    bad_exit += run_cli({"annotate", "--input", p("corpus"), "--out", p("ann.jsonl"), "--seed", "21"}) != 0;
    bad_exit += run_cli({"label", "--annotations", p("ann.jsonl"), "--features", p("corpus"), "--out", p("labeled.jsonl")}) != 0;
    bad_exit += run_cli({"gen-vqa", "--annotations", p("labeled.jsonl"), "--out", p("vqa.jsonl")}) != 0;
    bad_exit += run_cli({"eval", "--pred", p("vqa.jsonl"), "--gt", p("labeled.jsonl"), "--seg-pred", p("vqa.jsonl"),
                         "--cutoffs", p("corpus/cutoffs.jsonl"), "--out", p("eval.json")}) != 0;
  }
  int compared = 0, differing = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root / "a");
    std::string x = slurp(e.path()), y = slurp(root / "b" / rel);
    if (rel.filename() == "ann.jsonl.report.json") {
      auto jx = json::parse(x), jy = json::parse(y);
      jx["report"].erase("timing");
      jy["report"].erase("timing");
      x = jx.dump();
      y = jy.dump();
    }
    ++compared;
    if (x != y) {
      ++differing;
      std::fprintf(stderr, "differs: %s\n", rel.string().c_str());
    }
  }
  std::ostringstream d;
  d << compared << " artifacts compared, " << differing << " differ, nonzero exits " << bad_exit;
  report("mock determinism", bad_exit == 0 && differing == 0 && compared >= 8, d.str());
}

void render_parse_roundtrip() {
  // fixture frames: every frame of a labeled synthetic corpus plus random trajectories
  auto specs = synth_specs(pipeline_corpus(12, 4));
  MockBackend backend(0);
  VectorSource src(specs);
  auto out = run_pipeline(src, backend, PipelineConfig{});
  std::vector<EpisodeAnnotations> episodes = group_episodes(out.records);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto f = oracle::random_trajectory(rng, 10, 200);
    EpisodeAnnotations ep;
    const int T = static_cast<int>(f.diffs.size()) + 1;
    ep.episode = {"rand", "ep" + std::to_string(i), "cam", T, "do the task"};
    ep.segmentation = f.seg;
    const auto assign = expand_segments_to_frames(f.seg, T);
    for (int t = 0; t < T; ++t) {
      AnnotationRecord r;
      r.episode = ep.episode;
      r.frame_id = t;
      r.subtask_id = assign[t];
      r.remaining_subtasks = remaining_at(f.seg, t);
      ep.records.push_back(r);
    }
    episodes.push_back(std::move(ep));
  }
  double worst = 0.0;
  long long frames = 0;
  SamplingConfig cfg;
  for (auto& ep : episodes) {
    std::vector<double> diffs(ep.episode.num_frames - 1);
    for (auto& d : diffs) d = std::uniform_real_distribution<double>(0, 1)(rng);
    const auto labels = progress_labels(ep.segmentation, diffs);
    for (auto& r : ep.records) r.progress = labels.values[r.frame_id];
    for (const auto& r : ep.records) {
      const auto s = gen_progress(ep, r.frame_id, cfg);
      worst = std::max(worst, std::abs(parse_progress_tag(s.target).value - *r.progress));
      ++frames;
    }
  }
  std::ostringstream d;
  d << frames << " frames, max |parsed - label| = " << worst;
  report("render/parse round-trip", worst <= 5e-5, d.str());
}

void oneshot_split() {
  std::vector<TrajectoryTag> tags;
  for (int k = 0; k < 3; ++k) {
    const std::string task = "task" + std::to_string(k);
    for (int i = 0; i < 2; ++i) tags.push_back({task + "/s" + std::to_string(i), task, Outcome::Success, std::nullopt});
    for (int i = 0; i < 2; ++i) tags.push_back({task + "/a" + std::to_string(i), task, Outcome::Failure, "A"});
    tags.push_back({task + "/b0", task, Outcome::Failure, "B"});
  }
  bool ok = true;
  std::size_t succ = 0, both = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s1 = build_oneshot_splits(tags, SplitMode::Succ, seed);
    const auto s2 = build_oneshot_splits(tags, SplitMode::SuccFail, seed);
    const auto s3 = build_oneshot_splits(tags, SplitMode::SuccFail, seed);
    succ = s1.train.size();
    both = s2.train.size();
    ok = ok && succ == 3 && both == 9 && s2.train == s3.train && s2.test == s3.test &&
         s2.train.size() + s2.test.size() == tags.size();
  }
  report("one-shot split", ok, "train sizes " + std::to_string(succ) + " (succ), " + std::to_string(both) + " (succ_fail), stable over 10 seeds");
}

void rft_labels() {
  std::mt19937_64 rng(31);
  std::vector<TrajectoryProgress> trs;
  for (int i = 0; i < 40; ++i) {
    TrajectoryProgress p{"traj" + std::to_string(i), "task" + std::to_string(i % 4), {}};
    const int T = std::uniform_int_distribution<int>(1, 120)(rng);
    double v = 0.0;
    for (int t = 0; t < T; ++t) {
      v = std::clamp(v + std::uniform_real_distribution<double>(-0.05, 0.1)(rng), 0.0, 1.0);
      p.values.push_back(v);
    }
    trs.push_back(p);
  }
  int count_errors = 0;
  for (int H : {1, 5, 50}) {
    const auto labels = rft_advantage_labels(trs, {H, 0.3});
    std::map<std::string, std::pair<long long, long long>> c;
    for (const auto& l : labels) {
      c[l.task].first += l.positive;
      ++c[l.task].second;
    }
    for (const auto& [task, pn] : c)
      if (pn.first != static_cast<long long>(std::ceil(0.3 * static_cast<double>(pn.second) - 1e-9))) ++count_errors;
  }
  const auto h1 = rft_advantage_labels(trs, {1, 0.3});
  std::map<std::string, double> sums;
  for (const auto& l : h1) sums[l.trajectory_id] += l.advantage;
  double worst = 0.0;
  for (const auto& p : trs) worst = std::max(worst, std::abs(sums[p.trajectory_id] - (p.values.back() - p.values.front())));
  std::ostringstream d;
  d << "per-task count mismatches " << count_errors << ", H=1 telescoping max error " << worst;
  report("RFT labels", count_errors == 0 && worst <= 1e-12, d.str());
}

}  // namespace

int main() {
  const std::pair<const char*, void (*)()> checks[] = {
      {"progress-formula oracle", progress_oracle},
      {"budget exactness", budget_exactness},
      {"time-interpolation reduction", time_reduction},
      {"EPR fixtures", epr_fixtures},
      {"BF1/mMAE fixture + greedy audit", bf1_fixture_and_audit},
      {"VOC/KT", voc_kt},
      {"MAE_fail", mae_fail_checks},
      {"pipeline exactly-once + overlap", pipeline_exactly_once},
      {"mock determinism", mock_determinism},
      {"render/parse round-trip", render_parse_roundtrip},
      {"one-shot split", oneshot_split},
      {"RFT labels", rft_labels},
  };
  for (const auto& [name, fn] : checks) {
    try {
      fn();
    } catch (const std::exception& e) {
      report(name, false, std::string("threw: ") + e.what());
    }
  }
  std::printf("%d of %zu criteria failed\n", failures, std::size(checks));
  return failures == 0 ? 0 : 1;
}
