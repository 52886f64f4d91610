#include "progkit/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <random>
#include <set>
#include <thread>

#include "progkit/bounded_queue.hpp"
#include "progkit/error.hpp"
#include "progkit/feature_io.hpp"
#include "progkit/jsonl.hpp"
#include "progkit/keyframes.hpp"

namespace progkit {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

void PipelineConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::ConfigError, what); };
  if (queue_capacity < 1) fail("queue_capacity must be >= 1");
  if (preprocessor_workers < 1) fail("preprocessor_workers must be >= 1");
  if (annotator_concurrency < 1) fail("annotator_concurrency must be >= 1");
  if (!(dedup_threshold >= 0.0 && dedup_threshold <= 1.0)) fail("dedup_threshold must lie in [0,1]");
  if (retry.max_attempts < 1) fail("retry.max_attempts must be >= 1");
  if (plan_sample_frames < 1 || segment_sample_frames < 1) fail("frame sample counts must be >= 1");
  if (pixel_grid < 1) fail("pixel_grid must be >= 1");
  if (!(simulated.jitter >= 0.0 && simulated.jitter <= 1.0)) fail("latency jitter must lie in [0,1]");
}

json PipelineConfig::to_json() const {
  return {{"queue_capacity", queue_capacity},
          {"preprocessor_workers", preprocessor_workers},
          {"annotator_concurrency", annotator_concurrency},
          {"dedup_threshold", dedup_threshold},
          {"retry", {{"max_attempts", retry.max_attempts}, {"backoff_base_ms", retry.backoff_base.count()}}},
          {"plan_sample_frames", plan_sample_frames},
          {"segment_sample_frames", segment_sample_frames},
          {"anchor_span_starts", anchor_span_starts},
          {"pixel_grid", pixel_grid},
          {"diff_metric", diff_metric == DiffMetric::L1 ? "l1" : "l2"},
          {"seed", seed}};
}

std::optional<EpisodeSpec> VectorSource::next() {
  if (pos_ >= episodes_.size()) return std::nullopt;
  return episodes_[pos_++];
}

DirectorySource::DirectorySource(const fs::path& root) {
  if (!fs::is_directory(root)) throw Error(ErrorCode::IoError, "input directory not found: " + root.string());
  auto sorted_dirs = [](const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_directory()) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
  };
  for (const auto& dataset : sorted_dirs(root)) {
    for (const auto& episode : sorted_dirs(dataset)) {
      if (!fs::exists(episode / "meta.json")) continue;
      for (const auto& camera : sorted_dirs(episode)) {
        EpisodeSpec spec;
        spec.ref.dataset_name = dataset.filename().string();
        spec.ref.episode_id = episode.filename().string();
        spec.ref.camera_key = camera.filename().string();
        spec.camera_dir = camera;
        specs_.push_back(std::move(spec));
      }
    }
  }
}

std::optional<EpisodeSpec> DirectorySource::next() {
  if (pos_ >= specs_.size()) return std::nullopt;
  return specs_[pos_++];
}

json QuarantineEntry::to_json() const {
  return {{"trajectory_id", episode.trajectory_id()},
          {"dataset_name", episode.dataset_name},
          {"episode_id", episode.episode_id},
          {"camera_key", episode.camera_key},
          {"stage", stage},
          {"error", error},
          {"message", message},
          {"raw_response", raw_response}};
}

json PipelineReport::to_json(bool include_timing) const {
  json j = {{"episodes_in", episodes_in},
            {"episodes_out", episodes_out},
            {"quarantined", quarantined},
            {"frames_out", frames_out},
            {"keyframes", keyframes},
            {"gap_frames", gap_frames},
            {"spans_without_keyframe", spans_without_keyframe},
            {"dropped_boxes", dropped_boxes},
            {"warnings", warnings}};
  if (include_timing) {
    auto secs = [](std::chrono::nanoseconds d) { return std::chrono::duration<double>(d).count(); };
    j["timing"] = {{"wall_time_s", secs(wall_time)},
                   {"throughput_fps", throughput_fps},
                   {"busy_s",
                    {{"read", secs(busy.read)},
                     {"preprocess", secs(busy.preprocess)},
                     {"annotate", secs(busy.annotate)},
                     {"consume", secs(busy.consume)}}},
                   {"busy_total_s", secs(busy.total())},
                   {"reader_blocked_pushes", reader_blocked_pushes},
                   {"reader_blocked_s", secs(reader_blocked_time)}};
  }
  return j;
}

void write_quarantine_jsonl(const fs::path& path, const std::vector<QuarantineEntry>& entries) {
  std::vector<json> rows;
  rows.reserve(entries.size());
  for (const auto& e : entries) rows.push_back(e.to_json());
  write_json_lines(path, rows);
}

void sort_records(std::vector<AnnotationRecord>& records) {
  std::stable_sort(records.begin(), records.end(), [](const AnnotationRecord& a, const AnnotationRecord& b) {
    return std::tie(a.episode.dataset_name, a.episode.episode_id, a.frame_id, a.episode.camera_key) <
           std::tie(b.episode.dataset_name, b.episode.episode_id, b.frame_id, b.episode.camera_key);
  });
}

std::vector<fs::path> list_frame_images(const fs::path& camera_dir) {
  std::vector<fs::path> images;
  if (fs::is_directory(camera_dir)) {
    for (const auto& e : fs::directory_iterator(camera_dir)) {
      const auto name = e.path().filename().string();
      if (name.rfind("frame_", 0) == 0 && e.path().extension() == ".png") images.push_back(e.path());
    }
  }
  std::sort(images.begin(), images.end());
  if (images.empty()) throw Error(ErrorCode::IoError, "no frames or features in " + camera_dir.string());
  return images;
}

FeatureMatrix image_features(const std::vector<fs::path>& images, int pixel_grid) {
  FeatureMatrix m;
  m.num_frames = images.size();
  m.dim = static_cast<std::size_t>(pixel_grid) * pixel_grid;
  m.values.reserve(m.num_frames * m.dim);
  for (const auto& path : images) {
    const auto features = grayscale_features(read_png_gray(path), pixel_grid);
    m.values.insert(m.values.end(), features.begin(), features.end());
  }
  return m;
}

FeatureMatrix load_camera_features(const fs::path& camera_dir, int pixel_grid) {
  if (fs::exists(camera_dir / "features.bin")) return read_feature_matrix(camera_dir / "features.bin");
  return image_features(list_frame_images(camera_dir), pixel_grid);
}

namespace {

struct LoadedEpisode {
  EpisodeContext context;
  int num_frames = 0;
  std::vector<fs::path> images;
  std::optional<FeatureMatrix> features;
};

struct PreparedEpisode {
  LoadedEpisode loaded;
  std::vector<double> diffs;
  std::vector<int> keyframes;
  std::vector<FrameInput> plan_frames;
  std::vector<FrameInput> segment_frames;
};

struct AnnotatedEpisode {
  PreparedEpisode prepared;
  SegmentationResult segmentation;
  std::vector<std::optional<int>> assignment;
  std::vector<AnnotationRecord> keyframe_records;
  std::vector<std::string> warnings;
  int dropped_boxes = 0;
};

std::vector<int> even_indices(int num_frames, int count) {
  count = std::min(count, num_frames);
  if (count <= 1) return {0};
  std::vector<int> out;
  for (int i = 0; i < count; ++i) out.push_back(static_cast<int>(static_cast<long long>(i) * (num_frames - 1) / (count - 1)));
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

FrameInput frame_input(const LoadedEpisode& ep, int index) {
  FrameInput f{index, {}};
  if (!ep.images.empty()) f.image = ep.images[index];
  return f;
}

bool task_completed(const SegmentationResult& seg) {
  return seg.all_completed() && seg.overall_notes.find("task not completed") == std::string::npos;
}

CompletionState state_at(bool completed, int frame, int num_frames, const std::vector<std::string>& remaining) {
  if (!completed && frame == num_frames - 1) return CompletionState::GivenUp;
  return remaining.empty() ? CompletionState::Finished : CompletionState::Unfinished;
}

LoadedEpisode load_episode(const EpisodeSpec& spec) {
  LoadedEpisode ep;
  ep.context.episode = spec.ref;
  ep.context.metadata = spec.metadata;
  if (ep.context.metadata.empty() && !spec.camera_dir.empty()) {
    const auto meta_path = spec.camera_dir.parent_path() / "meta.json";
    std::ifstream in(meta_path);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + meta_path.string());
    try {
      ep.context.metadata = json::parse(in);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::SchemaViolation, meta_path.string() + ": " + e.what());
    }
  }
  const auto& meta = ep.context.metadata;
  if (meta.contains("instruction")) {
    if (!meta["instruction"].is_string()) throw Error(ErrorCode::SchemaViolation, "meta.json `instruction` must be a string");
    ep.context.episode.instruction = meta["instruction"].get<std::string>();
  }
  if (ep.context.episode.instruction.empty()) throw Error(ErrorCode::SchemaViolation, "episode has no instruction");
  if (meta.contains("num_frames")) {
    if (!meta["num_frames"].is_number_integer()) throw Error(ErrorCode::SchemaViolation, "meta.json `num_frames` must be an integer");
    ep.num_frames = meta["num_frames"].get<int>();
  }

  if (spec.features) {
    ep.features = spec.features;
  } else if (!spec.camera_dir.empty() && fs::exists(spec.camera_dir / "features.bin")) {
    ep.features = read_feature_matrix(spec.camera_dir / "features.bin");
  } else if (!spec.camera_dir.empty()) {
    ep.images = list_frame_images(spec.camera_dir);
  } else {
    throw Error(ErrorCode::IoError, "episode " + spec.ref.trajectory_id() + " has neither features nor a directory");
  }

  const int available = ep.features ? static_cast<int>(ep.features->num_frames) : static_cast<int>(ep.images.size());
  if (ep.num_frames == 0) ep.num_frames = available;
  if (ep.num_frames < 1 || ep.num_frames != available) {
    throw Error(ErrorCode::LengthMismatch, "meta num_frames " + std::to_string(ep.num_frames) + " but " +
                                               std::to_string(available) + " frames available");
  }
  ep.context.episode.num_frames = ep.num_frames;
  return ep;
}

PreparedEpisode preprocess(LoadedEpisode loaded, const PipelineConfig& config) {
  PreparedEpisode prep;
  if (loaded.features) {
    prep.diffs = frame_diffs(*loaded.features, config.diff_metric);
  } else {
    prep.diffs = frame_diffs(image_features(loaded.images, config.pixel_grid), config.diff_metric);
  }
  prep.keyframes = dedup_keyframes(prep.diffs, config.dedup_threshold);
  for (int i : even_indices(loaded.num_frames, config.plan_sample_frames)) prep.plan_frames.push_back(frame_input(loaded, i));
  for (int i : even_indices(loaded.num_frames, config.segment_sample_frames)) prep.segment_frames.push_back(frame_input(loaded, i));
  prep.loaded = std::move(loaded);
  return prep;
}

AnnotatedEpisode annotate(PreparedEpisode prep, AnnotatorBackend& backend, const PipelineConfig& config) {
  AnnotatedEpisode out;
  const auto& ctx = prep.loaded.context;
  const int num_frames = prep.loaded.num_frames;

  auto plan = plan_task(ctx, prep.plan_frames, backend);
  out.warnings = plan.warnings;
  auto validated = segment_subtasks(ctx, plan.steps, prep.segment_frames, num_frames, backend, ValidationPolicy::AutoTrim);
  for (const auto& r : validated.report.repairs) out.warnings.push_back("repair subtask " + std::to_string(r.subtask_id) + ": " + r.detail);
  out.warnings.insert(out.warnings.end(), validated.report.warnings.begin(), validated.report.warnings.end());
  out.segmentation = std::move(validated.segmentation);
  out.assignment = expand_segments_to_frames(out.segmentation, num_frames);

  std::set<int> keyframes(prep.keyframes.begin(), prep.keyframes.end());
  if (config.anchor_span_starts) {
    for (const auto& s : out.segmentation.subtasks) {
      if (s.is_valid()) keyframes.insert(*s.start_frame);
    }
  }
  const bool completed = task_completed(out.segmentation);
  for (int t : keyframes) {
    if (!out.assignment[t]) continue;
    const auto remaining = remaining_at(out.segmentation, t);
    const auto state = state_at(completed, t, num_frames, remaining);
    auto reasoning = annotate_keyframe(ctx, frame_input(prep.loaded, t), state, remaining, backend, config.retry);
    AnnotationRecord r;
    r.episode = ctx.episode;
    r.frame_id = t;
    r.subtask_id = out.assignment[t];
    for (const auto& s : out.segmentation.subtasks) {
      if (s.id == *r.subtask_id) r.subtask_name = s.name;
    }
    r.reasoning = std::move(reasoning.text);
    r.reasoning_source = ReasoningSource::Keyframe;
    r.completion = state;
    r.remaining_subtasks = remaining;
    r.grounding_boxes = std::move(reasoning.boxes);
    out.dropped_boxes += reasoning.dropped_boxes;
    out.warnings.insert(out.warnings.end(), reasoning.warnings.begin(), reasoning.warnings.end());
    out.keyframe_records.push_back(std::move(r));
  }
  out.prepared = std::move(prep);
  return out;
}

struct ConsumedEpisode {
  std::vector<AnnotationRecord> records;
  std::size_t gap_frames = 0;
  std::size_t spans_without_keyframe = 0;
};

ConsumedEpisode consume(const AnnotatedEpisode& ann) {
  const auto& episode = ann.prepared.loaded.context.episode;
  const int num_frames = ann.prepared.loaded.num_frames;
  std::map<int, std::string> names;
  for (const auto& s : ann.segmentation.subtasks) names[s.id] = s.name;
  auto propagated = propagate_keyframe_reasoning(ann.keyframe_records, ann.assignment, episode, names);

  ConsumedEpisode out;
  out.spans_without_keyframe = propagated.report.spans_without_keyframe.size();
  const bool completed = task_completed(ann.segmentation);
  std::size_t next = 0;
  for (int t = 0; t < num_frames; ++t) {
    AnnotationRecord r;
    if (next < propagated.records.size() && propagated.records[next].frame_id == t) {
      r = std::move(propagated.records[next++]);
    } else {
      r.frame_id = t;
      r.reasoning_source = ReasoningSource::Propagated;
      ++out.gap_frames;
    }
    r.episode = episode;
    r.remaining_subtasks = remaining_at(ann.segmentation, t);
    r.completion = state_at(completed, t, num_frames, r.remaining_subtasks);
    out.records.push_back(std::move(r));
  }
  return out;
}

void simulate(std::chrono::microseconds base, double jitter, std::uint64_t seed, const std::string& key) {
  if (base.count() <= 0) return;
  double factor = 1.0;
  if (jitter > 0.0) {
    std::mt19937_64 rng(stable_hash(key, seed));
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    factor = 1.0 + jitter * (2.0 * u - 1.0);
  }
  std::this_thread::sleep_for(std::chrono::duration_cast<std::chrono::microseconds>(base * factor));
}

class StageTimer {
 public:
  explicit StageTimer(std::atomic<long long>& sink) : sink_(sink), start_(Clock::now()) {}
  ~StageTimer() {
    sink_.fetch_add(std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - start_).count(),
                    std::memory_order_relaxed);
  }
  StageTimer(const StageTimer&) = delete;
  StageTimer& operator=(const StageTimer&) = delete;

 private:
  std::atomic<long long>& sink_;
  Clock::time_point start_;
};

}  // namespace

PipelineOutput run_pipeline(EpisodeSource& source, AnnotatorBackend& backend, const PipelineConfig& config) {
  config.validate();
  const auto started = Clock::now();

  BoundedQueue<LoadedEpisode> read_q(config.queue_capacity);
  BoundedQueue<PreparedEpisode> prep_q(config.queue_capacity);
  BoundedQueue<AnnotatedEpisode> ann_q(config.queue_capacity);

  std::atomic<long long> busy_read{0}, busy_prep{0}, busy_ann{0}, busy_consume{0};
  std::atomic<std::size_t> episodes_in{0};

  std::mutex quarantine_mu;
  std::vector<QuarantineEntry> quarantine;
  auto quarantine_episode = [&](const EpisodeRef& ref, const char* stage, const std::exception& e) {
    QuarantineEntry q;
    q.episode = ref;
    q.stage = stage;
    q.message = e.what();
    if (const auto* err = dynamic_cast<const Error*>(&e)) q.error = std::string(to_string(err->code()));
    else q.error = "InternalError";
    if (const auto* resp = dynamic_cast<const ResponseError*>(&e)) q.raw_response = resp->raw_response();
    std::lock_guard lock(quarantine_mu);
    quarantine.push_back(std::move(q));
  };

  const auto& sim = config.simulated;

  std::thread reader([&] {
    while (true) {
      std::optional<EpisodeSpec> spec;
      {
        StageTimer timer(busy_read);
        spec = source.next();
        if (!spec) break;
        episodes_in.fetch_add(1);
        simulate(sim.read, sim.jitter, config.seed, spec->ref.trajectory_id() + "#read");
      }
      std::optional<LoadedEpisode> loaded;
      {
        StageTimer timer(busy_read);
        try {
          loaded = load_episode(*spec);
        } catch (const std::exception& e) {
          quarantine_episode(spec->ref, "read", e);
        }
      }
      if (loaded) read_q.push(std::move(*loaded));
    }
    read_q.close();
  });

  std::atomic<int> preprocessors_left{config.preprocessor_workers};
  std::vector<std::thread> preprocessors;
  for (int w = 0; w < config.preprocessor_workers; ++w) {
    preprocessors.emplace_back([&] {
      while (auto item = read_q.pop()) {
        std::optional<PreparedEpisode> prepared;
        {
          StageTimer timer(busy_prep);
          const EpisodeRef ref = item->context.episode;
          simulate(sim.preprocess, sim.jitter, config.seed, ref.trajectory_id() + "#preprocess");
          try {
            prepared = preprocess(std::move(*item), config);
          } catch (const std::exception& e) {
            quarantine_episode(ref, "preprocess", e);
          }
        }
        if (prepared) prep_q.push(std::move(*prepared));
      }
      if (preprocessors_left.fetch_sub(1) == 1) prep_q.close();
    });
  }

  std::atomic<int> annotators_left{config.annotator_concurrency};
  std::vector<std::thread> annotators;
  for (int w = 0; w < config.annotator_concurrency; ++w) {
    annotators.emplace_back([&] {
      while (auto item = prep_q.pop()) {
        std::optional<AnnotatedEpisode> annotated;
        {
          StageTimer timer(busy_ann);
          const EpisodeRef ref = item->loaded.context.episode;
          simulate(sim.annotate, sim.jitter, config.seed, ref.trajectory_id() + "#annotate");
          try {
            annotated = annotate(std::move(*item), backend, config);
          } catch (const std::exception& e) {
            quarantine_episode(ref, "annotate", e);
          }
        }
        if (annotated) ann_q.push(std::move(*annotated));
      }
      if (annotators_left.fetch_sub(1) == 1) ann_q.close();
    });
  }

  // The consumer is the single writer of the output collection.
  PipelineOutput output;
  std::thread consumer([&] {
    while (auto item = ann_q.pop()) {
      StageTimer timer(busy_consume);
      const EpisodeRef ref = item->prepared.loaded.context.episode;
      simulate(sim.consume, sim.jitter, config.seed, ref.trajectory_id() + "#consume");
      try {
        auto consumed = consume(*item);
        auto& report = output.report;
        ++report.episodes_out;
        report.frames_out += consumed.records.size();
        report.gap_frames += consumed.gap_frames;
        report.spans_without_keyframe += consumed.spans_without_keyframe;
        report.keyframes += item->keyframe_records.size();
        report.dropped_boxes += static_cast<std::size_t>(item->dropped_boxes);
        for (const auto& w : item->warnings) report.warnings.push_back(ref.trajectory_id() + ": " + w);
        std::move(consumed.records.begin(), consumed.records.end(), std::back_inserter(output.records));
      } catch (const std::exception& e) {
        quarantine_episode(ref, "consume", e);
      }
    }
  });

  reader.join();
  for (auto& t : preprocessors) t.join();
  for (auto& t : annotators) t.join();
  consumer.join();

  auto& report = output.report;
  output.quarantine = std::move(quarantine);
  std::sort(output.quarantine.begin(), output.quarantine.end(), [](const QuarantineEntry& a, const QuarantineEntry& b) {
    return a.episode.trajectory_id() < b.episode.trajectory_id();
  });
  sort_records(output.records);
  std::sort(report.warnings.begin(), report.warnings.end());

  report.episodes_in = episodes_in.load();
  report.quarantined = output.quarantine.size();
  report.busy.read = std::chrono::nanoseconds(busy_read.load());
  report.busy.preprocess = std::chrono::nanoseconds(busy_prep.load());
  report.busy.annotate = std::chrono::nanoseconds(busy_ann.load());
  report.busy.consume = std::chrono::nanoseconds(busy_consume.load());
  report.wall_time = Clock::now() - started;
  const double secs = std::chrono::duration<double>(report.wall_time).count();
  report.throughput_fps = secs > 0.0 ? static_cast<double>(report.frames_out) / secs : 0.0;
  report.reader_blocked_pushes = read_q.blocked_pushes();
  report.reader_blocked_time = read_q.blocked_time();
  return output;
}

}  // namespace progkit
