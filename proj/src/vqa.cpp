#include "progkit/vqa.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <regex>

#include "progkit/error.hpp"

namespace progkit {

using nlohmann::ordered_json;

void SamplingConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::ConfigError, what); };
  if (!(fps > 0.0)) fail("fps must be > 0");
  if (!(source_fps > 0.0)) fail("source_fps must be > 0");
  if (max_frames < 1) fail("max_frames must be >= 1");
  if (window < 1 || window > max_frames) fail("window must lie in [1, max_frames]");
  if (min_pixels < 1 || min_pixels > max_pixels) fail("need 1 <= min_pixels <= max_pixels");
}

std::string_view family_code(VqaFamily family) {
  switch (family) {
    case VqaFamily::SegWithTask: return "a1";
    case VqaFamily::SegTaskFree: return "a2";
    case VqaFamily::NextStep: return "b1";
    case VqaFamily::FuturePlan: return "b2";
    case VqaFamily::Progress: return "c";
  }
  return "?";
}

VqaFamily family_from_code(std::string_view code) {
  for (auto f : {VqaFamily::SegWithTask, VqaFamily::SegTaskFree, VqaFamily::NextStep, VqaFamily::FuturePlan,
                 VqaFamily::Progress}) {
    if (code == family_code(f) || code == family_name(f)) return f;
  }
  throw Error(ErrorCode::ConfigError, "unknown VQA family `" + std::string(code) + "`");
}

std::string_view family_name(VqaFamily family) {
  switch (family) {
    case VqaFamily::SegWithTask: return "seg_with_task";
    case VqaFamily::SegTaskFree: return "seg_task_free";
    case VqaFamily::NextStep: return "next_step";
    case VqaFamily::FuturePlan: return "future_plan";
    case VqaFamily::Progress: return "progress";
  }
  return "?";
}

ordered_json VqaSample::to_json() const {
  ordered_json images = ordered_json::array();
  ordered_json frames = ordered_json::array();
  ordered_json markers = ordered_json::array();
  for (const auto& r : visual_refs) {
    images.push_back(r.image);
    frames.push_back(r.frame_id);
    if (r.marker) markers.push_back(*r.marker);
  }
  ordered_json j;
  j["family"] = family_name(family);
  j["instruction"] = instruction;
  j["prompt"] = prompt;
  j["images"] = std::move(images);
  j["target"] = target;
  j["progress"] = progress_value ? ordered_json(*progress_value) : ordered_json(nullptr);
  j["trajectory_id"] = trajectory_id;
  j["frame_id"] = frame_id ? ordered_json(*frame_id) : ordered_json(nullptr);
  j["source_frames"] = std::move(frames);
  if (!markers.empty()) j["frame_markers"] = std::move(markers);
  return j;
}

SegmentationResult segmentation_from_records(std::span<const AnnotationRecord> records) {
  if (records.empty()) throw Error(ErrorCode::EmptyInput, "trajectory has no records");
  const auto id = records.front().episode.trajectory_id();
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].frame_id != static_cast<int>(i)) {
      throw Error(ErrorCode::SchemaViolation,
                  id + ": records must cover frames 0..T-1 exactly once (frame " + std::to_string(i) + " missing or repeated)");
    }
  }
  SegmentationResult seg;
  seg.task = records.front().episode.instruction;
  std::map<int, std::size_t> seen;
  for (std::size_t i = 0; i < records.size();) {
    const auto& r = records[i];
    if (!r.subtask_id) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < records.size() && records[j + 1].subtask_id == r.subtask_id) ++j;
    if (seen.count(*r.subtask_id) != 0U) {
      throw Error(ErrorCode::SchemaViolation, id + ": subtask " + std::to_string(*r.subtask_id) + " spans non-contiguous frames");
    }
    seen[*r.subtask_id] = seg.subtasks.size();
    SubtaskSegment s;
    s.id = *r.subtask_id;
    s.name = r.subtask_name.value_or("");
    s.start_frame = static_cast<int>(i);
    s.complete_frame = static_cast<int>(j);
    seg.subtasks.push_back(std::move(s));
    i = j + 1;
  }
  int next_id = 1;
  for (const auto& s : seg.subtasks) next_id = std::max(next_id, s.id + 1);
  // spans always end by the last frame, so whatever is still remaining there never got one
  for (const auto& name : records.back().remaining_subtasks) {
    SubtaskSegment s;
    s.id = next_id++;
    s.name = name;
    seg.subtasks.push_back(std::move(s));
  }
  seg.overall_notes = records.back().completion == CompletionState::GivenUp ? "task not completed" : "";
  return seg;
}

std::vector<EpisodeAnnotations> group_episodes(const std::vector<AnnotationRecord>& records) {
  std::map<std::string, std::vector<AnnotationRecord>> by_id;
  for (const auto& r : records) by_id[r.episode.trajectory_id()].push_back(r);
  std::vector<EpisodeAnnotations> out;
  for (auto& [id, recs] : by_id) {
    std::stable_sort(recs.begin(), recs.end(),
                     [](const AnnotationRecord& a, const AnnotationRecord& b) { return a.frame_id < b.frame_id; });
    EpisodeAnnotations ep;
    ep.episode = recs.front().episode;
    ep.episode.num_frames = static_cast<int>(recs.size());
    if (recs.front().episode.num_frames != 0 && recs.front().episode.num_frames != ep.episode.num_frames) {
      throw Error(ErrorCode::LengthMismatch, id + ": num_frames " + std::to_string(recs.front().episode.num_frames) +
                                                 " but " + std::to_string(recs.size()) + " records");
    }
    ep.segmentation = segmentation_from_records(recs);
    ep.records = std::move(recs);
    out.push_back(std::move(ep));
  }
  return out;
}

int sampled_length(int num_frames, const SamplingConfig& config) {
  const double raw = std::round(num_frames * config.fps / config.source_fps);
  const int upper = std::min(num_frames, config.max_frames);
  return std::clamp(static_cast<int>(raw), 1, std::max(upper, 1));
}

int sampled_to_source(int j, int num_frames, int samples) {
  return static_cast<int>(static_cast<long long>(j) * num_frames / samples);
}

int source_to_sampled(int i, int num_frames, int samples) {
  return static_cast<int>(static_cast<long long>(i) * samples / num_frames);
}

std::vector<int> window_frames(int t, const SamplingConfig& config) {
  const int stride = std::max(1, static_cast<int>(std::lround(config.source_fps / config.fps)));
  std::vector<int> out;
  for (int k = 0; k < config.window; ++k) {
    const int f = t - k * stride;
    if (f < 0) break;
    out.push_back(f);
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::string seg_with_task_prompt(const std::string& task) {
  return "Segment the execution of the task \"" + task +
         "\" into consecutive atomic actions. Each segment should correspond to a single, explicit verb-level "
         "action. Output a JSON list with keys \"action_description\", \"start_frame\", and \"end_frame\".";
}

std::string seg_task_free_prompt() {
  return "Segment the actions shown in the image sequence into consecutive atomic actions, each described by a "
         "single explicit verb. Output a JSON list with keys \"action_description\", \"start_frame\", and "
         "\"end_frame\".";
}

std::string next_step_prompt(const std::string& task) {
  return "Given the recent observation and the task \"" + task +
         "\", predict the immediate next atomic action the robot should execute. Use a single explicit verb-level "
         "description.";
}

std::string future_plan_prompt(const std::string& task) {
  return "Given the recent observation and the task \"" + task +
         "\", list the remaining atomic actions required to complete the task, starting from the next time step. "
         "Each action should be a single explicit verb-level step.";
}

std::string progress_prompt(const std::string& task) {
  return "Given the recent observation and the task \"" + task +
         "\", first infer the remaining atomic actions required to complete the task. Then estimate the current "
         "completion percentage and output it as a float wrapped by <progress> tags.";
}

namespace {

std::string image_path(const SamplingConfig& config, const EpisodeRef& ref, int frame) {
  char name[32];
  std::snprintf(name, sizeof name, "frame_%06d.png", frame);
  std::string path = ref.dataset_name + "/" + ref.episode_id + "/" + ref.camera_key + "/" + name;
  if (!config.image_root.empty()) path = config.image_root + "/" + path;
  return path;
}

void check_frame(const EpisodeAnnotations& episode, int t) {
  if (t < 0 || t >= episode.episode.num_frames) {
    throw Error(ErrorCode::BoundaryOutOfRange, "frame " + std::to_string(t) + " outside trajectory of " +
                                                   std::to_string(episode.episode.num_frames) + " frames");
  }
}

VqaSample window_sample(const EpisodeAnnotations& episode, VqaFamily family, int t, const SamplingConfig& config,
                        const std::string& question) {
  VqaSample s;
  s.family = family;
  s.instruction = episode.episode.instruction;
  s.trajectory_id = episode.episode.trajectory_id();
  s.frame_id = t;
  std::string images;
  for (int f : window_frames(t, config)) {
    s.visual_refs.push_back({f, std::nullopt, image_path(config, episode.episode, f)});
    images += "<image>";
  }
  s.prompt = images + "\n" + question;
  return s;
}

std::vector<SubtaskSegment> future_segments(const EpisodeAnnotations& episode, int t) {
  std::vector<SubtaskSegment> out;
  for (const auto& s : episode.segmentation.subtasks) {
    if (s.start_frame && *s.start_frame > t) out.push_back(s);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const SubtaskSegment& a, const SubtaskSegment& b) { return *a.start_frame < *b.start_frame; });
  if (out.empty()) {
    throw Error(ErrorCode::NoFutureAction, episode.episode.trajectory_id() + ": no action starts after frame " +
                                               std::to_string(t));
  }
  return out;
}

}  // namespace

VqaSample gen_action_segmentation(const EpisodeAnnotations& episode, bool with_task, const SamplingConfig& config) {
  const auto segments = episode.segmentation.valid_segments();
  if (segments.empty()) {
    throw Error(ErrorCode::NoValidSubtasks, episode.episode.trajectory_id() + " has no valid subtask span");
  }
  const int T = episode.episode.num_frames;
  const int S = sampled_length(T, config);

  VqaSample s;
  s.family = with_task ? VqaFamily::SegWithTask : VqaFamily::SegTaskFree;
  s.instruction = episode.episode.instruction;
  s.trajectory_id = episode.episode.trajectory_id();
  std::string sequence;
  for (int j = 0; j < S; ++j) {
    const int f = sampled_to_source(j, T, S);
    s.visual_refs.push_back({f, j, image_path(config, episode.episode, f)});
    sequence += "<image><frame_id: " + std::to_string(j) + ">";
  }
  s.prompt = sequence + "\n" + (with_task ? seg_with_task_prompt(episode.episode.instruction) : seg_task_free_prompt());

  ordered_json target = ordered_json::array();
  for (const auto& seg : segments) {
    ordered_json item;
    item["action_description"] = seg.name;
    item["start_frame"] = source_to_sampled(*seg.start_frame, T, S);
    item["end_frame"] = source_to_sampled(*seg.complete_frame, T, S);
    target.push_back(std::move(item));
  }
  s.target = target.dump();
  return s;
}

VqaSample gen_next_step(const EpisodeAnnotations& episode, int t, const SamplingConfig& config) {
  check_frame(episode, t);
  const auto future = future_segments(episode, t);
  auto s = window_sample(episode, VqaFamily::NextStep, t, config, next_step_prompt(episode.episode.instruction));
  s.target = future.front().name;
  return s;
}

VqaSample gen_future_plan(const EpisodeAnnotations& episode, int t, const SamplingConfig& config) {
  check_frame(episode, t);
  const auto future = future_segments(episode, t);
  auto s = window_sample(episode, VqaFamily::FuturePlan, t, config, future_plan_prompt(episode.episode.instruction));
  for (std::size_t i = 0; i < future.size(); ++i) {
    if (i > 0) s.target += "\n";
    s.target += future[i].name;
  }
  return s;
}

std::string render_progress_tag(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "<progress> %.2f %%</progress>", 100.0 * value);
  return buf;
}

VqaSample gen_progress(const EpisodeAnnotations& episode, int t, const SamplingConfig& config) {
  check_frame(episode, t);
  const auto& record = episode.records.at(t);
  if (!record.progress) {
    throw Error(ErrorCode::MissingLabels, episode.episode.trajectory_id() + ": frame " + std::to_string(t) +
                                              " has no progress label");
  }
  auto s = window_sample(episode, VqaFamily::Progress, t, config, progress_prompt(episode.episode.instruction));
  const auto remaining = remaining_at(episode.segmentation, t);
  std::string text = "Remaining actions:";
  if (remaining.empty()) text += " none";
  for (std::size_t i = 0; i < remaining.size(); ++i) text += "\n" + std::to_string(i + 1) + ". " + remaining[i];
  s.target = text + "\n" + render_progress_tag(*record.progress);
  s.progress_value = *record.progress;
  return s;
}

ParsedProgress parse_progress_tag(std::string_view text) {
  static const std::regex kTag(R"(<progress>\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*%?\s*</progress>)");
  const std::string s(text);
  std::smatch last;
  bool found = false;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), kTag); it != std::sregex_iterator(); ++it) {
    last = *it;
    found = true;
  }
  if (!found) throw Error(ErrorCode::TagNotFound, "no <progress> tag in response");
  const double percent = std::stod(last[1].str());
  ParsedProgress out;
  out.value = percent / 100.0;
  if (percent < 0.0 || percent > 100.0) {
    out.value = std::clamp(out.value, 0.0, 1.0);
    out.clamped = true;
  }
  return out;
}

std::vector<int> density_frames(int num_frames, int density) {
  if (num_frames < 1) throw Error(ErrorCode::DegenerateLength, "trajectory has no frames");
  if (density < 1) throw Error(ErrorCode::ConfigError, "density must be >= 1");
  if (density == 1 || num_frames == 1) return {0};
  std::vector<int> out;
  for (int i = 0; i < density; ++i) {
    out.push_back(static_cast<int>(static_cast<long long>(i) * (num_frames - 1) / (density - 1)));
  }
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace progkit
