#include "progkit/synth.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <random>

#include "progkit/backend.hpp"
#include "progkit/error.hpp"
#include "progkit/feature_io.hpp"
#include "progkit/jsonl.hpp"

namespace progkit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<const char*, 6> kColors = {"red", "blue", "green", "yellow", "white", "black"};
constexpr std::array<const char*, 4> kContainers = {"bowl", "basket", "tray", "box"};

double uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

struct TaskTemplate {
  std::string name;
  std::string instruction;
  std::vector<std::string> plan;
  std::vector<std::string> objects;  // object handled by each step
};

TaskTemplate task_template(const SynthConfig& config, int task) {
  const auto h = stable_hash("task#" + std::to_string(task), config.seed);
  const int k = config.min_subtasks + static_cast<int>(h % static_cast<std::uint64_t>(config.max_subtasks - config.min_subtasks + 1));
  const std::string container = kContainers[task % kContainers.size()];
  TaskTemplate t;
  t.name = "task_" + std::to_string(task);
  std::vector<std::string> blocks;
  for (int i = 0; static_cast<int>(t.plan.size()) < k; ++i) {
    const std::string block = std::string(kColors[(task + i) % kColors.size()]) + " block";
    blocks.push_back(block);
    t.plan.push_back("Grasp the " + block);
    t.objects.push_back(block);
    if (static_cast<int>(t.plan.size()) < k) {
      t.plan.push_back("Place the " + block + " into the " + container);
      t.objects.push_back(container);
    }
  }
  if (k % 2 == 1 && k > 1) {
    t.plan.back() = "Push the " + container + " forward";
    t.objects.back() = container;
    blocks.pop_back();
  }
  if (blocks.empty()) {
    t.instruction = "pick up the " + t.objects.front();
  } else {
    t.instruction = "put the ";
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      if (i > 0) t.instruction += i + 1 == blocks.size() ? " and the " : ", the ";
      t.instruction += blocks[i];
    }
    t.instruction += " into the " + container;
    if (k % 2 == 1 && k > 1) t.instruction += " and push it forward";
  }
  return t;
}

}  // namespace

void SynthConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::ConfigError, what); };
  if (episodes < 0) fail("episodes must be >= 0");
  if (min_subtasks < 1 || max_subtasks < min_subtasks) fail("need 1 <= min_subtasks <= max_subtasks");
  if (min_frames < 2 || max_frames < min_frames) fail("need 2 <= min_frames <= max_frames");
  if (feature_dim < 1) fail("feature_dim must be >= 1");
  if (!(fps > 0.0)) fail("fps must be > 0");
  if (tasks < 1) fail("tasks must be >= 1");
  if (!(failure_rate >= 0.0 && failure_rate <= 1.0)) fail("failure_rate must lie in [0,1]");
  if (!(fault_rate >= 0.0 && fault_rate <= 1.0)) fail("fault_rate must lie in [0,1]");
  if (failure_rate > 0.0 && failure_types.empty()) fail("failure_types must not be empty");
  if (cameras.empty()) fail("at least one camera is required");
  if (png_size < 1) fail("png_size must be >= 1");
}

SynthEpisode synth_episode(const SynthConfig& config, int index) {
  std::mt19937_64 rng(stable_hash("episode#" + std::to_string(index), config.seed));
  const int task = index % config.tasks;
  const auto tmpl = task_template(config, task);
  const int K = static_cast<int>(tmpl.plan.size());

  SynthEpisode ep;
  char id[32];
  std::snprintf(id, sizeof id, "ep_%05d", index);
  ep.episode_id = id;
  ep.task = tmpl.name;
  ep.instruction = tmpl.instruction;
  const int T = std::max(uniform_int(rng, config.min_frames, config.max_frames), 3 * K + 4);
  ep.num_frames = T;

  // gaps before, between and after spans; dropped when the trajectory is too short
  std::vector<int> gaps(K + 1, 0);
  gaps[0] = uniform_int(rng, 0, 2);
  for (int k = 1; k < K; ++k) gaps[k] = uniform(rng) < 0.3 ? uniform_int(rng, 1, 3) : 0;
  gaps[K] = uniform_int(rng, 0, 2);
  int gap_total = 0;
  for (int g : gaps) gap_total += g;
  if (T - gap_total < 2 * K) std::fill(gaps.begin(), gaps.end(), 0), gap_total = 0;
  const int usable = T - gap_total;
  std::vector<int> weights(K);
  int weight_sum = 0;
  for (auto& w : weights) weight_sum += (w = uniform_int(rng, 1, 100));
  std::vector<int> durations(K);
  int assigned = 0;
  for (int k = 0; k < K; ++k) {
    durations[k] = 2 + (usable - 2 * K) * weights[k] / weight_sum;
    assigned += durations[k];
  }
  durations[K - 1] += usable - assigned;

  const bool failed = uniform(rng) < config.failure_rate;
  const int fail_at = failed ? uniform_int(rng, 0, K - 1) : K;
  ep.segmentation.task = ep.instruction;
  int cursor = gaps[0];
  std::vector<std::pair<int, int>> spans;
  for (int k = 0; k < K; ++k) {
    SubtaskSegment s;
    s.id = k + 1;
    s.name = tmpl.plan[k];
    const int start = cursor;
    const int end = cursor + durations[k] - 1;
    spans.emplace_back(start, end);
    if (k < fail_at) {
      s.start_frame = start;
      s.complete_frame = end;
    } else if (k == fail_at) {
      s.start_frame = start;
      ep.t_cut = start + std::max(1, durations[k] / 2);
    }
    ep.segmentation.subtasks.push_back(std::move(s));
    cursor = end + 1 + gaps[k + 1];
  }
  if (failed) {
    ep.outcome = Outcome::Failure;
    ep.failure_type = config.failure_types[rng() % config.failure_types.size()];
    ep.segmentation.overall_notes = "task not completed: the robot stopped during '" + tmpl.plan[fail_at] + "'";
  }

  // features: anchor k -> anchor k+1 inside span k, held still elsewhere
  const int d = config.feature_dim;
  std::vector<std::vector<double>> anchors(K + 1, std::vector<double>(d));
  for (auto& a : anchors)
    for (auto& v : a) v = uniform(rng);
  ep.features.num_frames = T;
  ep.features.dim = d;
  ep.features.values.assign(static_cast<std::size_t>(T) * d, 0.0);
  std::vector<double> current = anchors[0];
  auto set_row = [&](int t, const std::vector<double>& v) {
    for (int j = 0; j < d; ++j) ep.features.values[static_cast<std::size_t>(t) * d + j] = static_cast<float>(v[j]);
  };
  std::vector<double> progress_within(T, -1.0);
  std::vector<int> span_of(T, -1);
  for (int k = 0; k < K && k <= fail_at; ++k) {
    const auto [s, e] = spans[k];
    std::vector<double> speed(e - s + 1, 0.0);
    double total = 0.0;
    for (int t = s + 1; t <= e; ++t) total += (speed[t - s] = 0.2 + uniform(rng));
    double acc = 0.0;
    for (int t = s; t <= e; ++t) {
      acc += speed[t - s];
      span_of[t] = k;
      progress_within[t] = total > 0.0 ? acc / total : 1.0;
    }
  }
  for (int t = 0; t < T; ++t) {
    const bool frozen = ep.t_cut && t > *ep.t_cut;
    if (span_of[t] >= 0 && !frozen) {
      const int k = span_of[t];
      for (int j = 0; j < d; ++j) current[j] = anchors[k][j] + (anchors[k + 1][j] - anchors[k][j]) * progress_within[t];
    }
    set_row(t, current);
  }

  json segments = json::array();
  for (const auto& s : ep.segmentation.subtasks) {
    segments.push_back({{"id", s.id},
                        {"name", s.name},
                        {"start_frame", s.start_frame ? json(*s.start_frame) : json(nullptr)},
                        {"complete_frame", s.complete_frame ? json(*s.complete_frame) : json(nullptr)},
                        {"notes", ""}});
  }
  json boxes = json::object();
  for (const auto& s : ep.segmentation.subtasks) {
    if (!s.start_frame) continue;
    const double x0 = 0.05 + 0.4 * uniform(rng);
    const double y0 = 0.05 + 0.4 * uniform(rng);
    boxes[std::to_string(*s.start_frame)] = json::array(
        {{{"label", tmpl.objects[s.id - 1]}, {"x_min", x0}, {"y_min", y0}, {"x_max", x0 + 0.3}, {"y_max", y0 + 0.3}}});
  }
  json script = {{"plan", tmpl.plan},
                 {"segments", segments},
                 {"overall_notes", ep.segmentation.overall_notes},
                 {"outcome", failed ? "failure" : "success"},
                 {"failure_type", ep.failure_type ? json(*ep.failure_type) : json(nullptr)},
                 {"t_cut", ep.t_cut ? json(*ep.t_cut) : json(nullptr)},
                 {"boxes", boxes}};
  if (uniform(rng) < config.fault_rate) {
    switch (rng() % 3) {
      case 0: script["faults"] = {{"segment", "I am unable to segment this video."}}; break;
      case 1: script["faults"] = {{"plan", "Sure, the robot should finish the task."}}; break;
      default: script["unavailable"] = true; break;
    }
  }
  ep.metadata = {{"instruction", ep.instruction},
                 {"num_frames", T},
                 {"fps", config.fps},
                 {"task", ep.task},
                 {"script", script}};
  return ep;
}

std::vector<EpisodeSpec> synth_specs(const SynthConfig& config) {
  config.validate();
  std::vector<EpisodeSpec> out;
  for (int i = 0; i < config.episodes; ++i) {
    const auto ep = synth_episode(config, i);
    for (const auto& camera : config.cameras) {
      EpisodeSpec spec;
      spec.ref.dataset_name = config.dataset;
      spec.ref.episode_id = ep.episode_id;
      spec.ref.camera_key = camera;
      spec.metadata = ep.metadata;
      spec.features = ep.features;
      out.push_back(std::move(spec));
    }
  }
  return out;
}

namespace {

GrayImage render_frame(const FeatureMatrix& features, int t, int size) {
  GrayImage img;
  img.width = img.height = size;
  img.pixels.resize(static_cast<std::size_t>(size) * size);
  const auto row = features.row(t);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double v = row[(static_cast<std::size_t>(x) * features.dim / size + y) % features.dim];
      img.pixels[static_cast<std::size_t>(y) * size + x] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
    }
  }
  return img;
}

}  // namespace

SynthSummary write_synth_corpus(const fs::path& root, const SynthConfig& config) {
  config.validate();
  SynthSummary summary;
  std::vector<TrajectoryTag> tags;
  std::vector<json> cutoffs;
  const fs::path dataset_dir = root / config.dataset;
  fs::create_directories(dataset_dir);
  for (int i = 0; i < config.episodes; ++i) {
    const auto ep = synth_episode(config, i);
    const fs::path dir = dataset_dir / ep.episode_id;
    fs::create_directories(dir);
    {
      std::ofstream meta(dir / "meta.json", std::ios::binary);
      if (!meta) throw Error(ErrorCode::IoError, "cannot write " + (dir / "meta.json").string());
      meta << ep.metadata.dump(2) << '\n';
    }
    for (const auto& camera : config.cameras) {
      fs::create_directories(dir / camera);
      if (!config.write_png) {
        write_feature_matrix(dir / camera / "features.bin", ep.features);
      } else {
        for (int t = 0; t < ep.num_frames; ++t) {
          char name[32];
          std::snprintf(name, sizeof name, "frame_%06d.png", t);
          write_png_gray(dir / camera / name, render_frame(ep.features, t, config.png_size));
        }
      }
      const std::string trajectory = config.dataset + "/" + ep.episode_id + "/" + camera;
      tags.push_back({trajectory, ep.task, ep.outcome, ep.failure_type});
      if (ep.t_cut) cutoffs.push_back({{"trajectory_id", trajectory}, {"t_cut", *ep.t_cut}});
      ++summary.trajectories;
      summary.frames += ep.num_frames;
    }
    ++summary.episodes;
    if (ep.outcome == Outcome::Failure) ++summary.failures;
  }
  std::ofstream out(root / "tags.csv", std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + (root / "tags.csv").string());
  write_tags_csv(out, tags);
  write_json_lines(root / "cutoffs.jsonl", cutoffs);
  return summary;
}

}  // namespace progkit
