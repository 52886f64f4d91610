#include "progkit/annotation.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "progkit/error.hpp"

namespace progkit {

std::string EpisodeRef::trajectory_id() const {
  return dataset_name + "/" + episode_id + "/" + camera_key;
}

std::vector<SubtaskSegment> SegmentationResult::valid_segments() const {
  std::vector<SubtaskSegment> out;
  for (const auto& s : subtasks) {
    if (s.is_valid()) out.push_back(s);
  }
  return out;
}

bool SegmentationResult::all_completed() const {
  return std::all_of(subtasks.begin(), subtasks.end(),
                     [](const SubtaskSegment& s) { return s.is_valid(); });
}

std::string_view to_string(CompletionState state) {
  switch (state) {
    case CompletionState::Unfinished: return "unfinished";
    case CompletionState::Finished: return "finished";
    case CompletionState::GivenUp: return "given_up";
  }
  return "unfinished";
}

CompletionState completion_from_string(std::string_view text) {
  if (text == "unfinished") return CompletionState::Unfinished;
  if (text == "finished") return CompletionState::Finished;
  if (text == "given_up") return CompletionState::GivenUp;
  throw Error(ErrorCode::SchemaViolation, "unknown completion state '" + std::string(text) + "'");
}

std::string_view to_string(ReasoningSource source) {
  return source == ReasoningSource::Keyframe ? "keyframe" : "propagated";
}

bool GroundingBox::is_valid() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  return unit(x_min) && unit(y_min) && unit(x_max) && unit(y_max) && x_min < x_max &&
         y_min < y_max;
}

int word_count(std::string_view text) {
  std::istringstream in{std::string(text)};
  int n = 0;
  std::string w;
  while (in >> w) ++n;
  return n;
}

namespace {

constexpr int kNotesWordBudget = 60;

std::string span_str(const SubtaskSegment& s) {
  auto b = [](const std::optional<int>& v) { return v ? std::to_string(*v) : std::string("null"); };
  return "[" + b(s.start_frame) + "," + b(s.complete_frame) + "]";
}

// Segments with a start first (ascending, stable), then the rest in input order.
void sort_by_start(std::vector<SubtaskSegment>& segs) {
  std::stable_sort(segs.begin(), segs.end(), [](const SubtaskSegment& a, const SubtaskSegment& b) {
    if (a.start_frame && b.start_frame) return *a.start_frame < *b.start_frame;
    return a.start_frame.has_value() && !b.start_frame.has_value();
  });
}

}  // namespace

ValidatedSegmentation validate_segmentation(const SegmentationResult& seg, int num_frames,
                                            ValidationPolicy policy) {
  if (seg.subtasks.empty()) throw Error(ErrorCode::EmptyPlan, "segmentation has no subtasks");
  if (num_frames < 1) {
    throw Error(ErrorCode::LengthMismatch, "num_frames must be >= 1, got " + std::to_string(num_frames));
  }
  const bool strict = policy == ValidationPolicy::Strict;

  ValidatedSegmentation out{seg, {}};
  auto& segs = out.segmentation.subtasks;
  auto& report = out.report;

  std::set<int> ids;
  for (const auto& s : segs) {
    if (!ids.insert(s.id).second) {
      throw Error(ErrorCode::SchemaViolation, "duplicate subtask id " + std::to_string(s.id));
    }
  }

  for (auto& s : segs) {
    if (s.complete_frame && !s.start_frame) {
      throw Error(ErrorCode::InvertedSpan,
                  "subtask " + std::to_string(s.id) + " has complete_frame without start_frame");
    }
    if (s.is_valid() && *s.start_frame > *s.complete_frame) {
      throw Error(ErrorCode::InvertedSpan, "subtask " + std::to_string(s.id) + " span " + span_str(s));
    }
    for (auto* b : {&s.start_frame, &s.complete_frame}) {
      if (!*b) continue;
      const int v = **b;
      if (v >= 0 && v < num_frames) continue;
      if (strict) {
        throw Error(ErrorCode::BoundaryOutOfRange, "subtask " + std::to_string(s.id) + " boundary " +
                                                       std::to_string(v) + " outside [0," +
                                                       std::to_string(num_frames - 1) + "]");
      }
      const int clamped = std::clamp(v, 0, num_frames - 1);
      report.repairs.push_back({Repair::Kind::Clamp, s.id,
                                "boundary " + std::to_string(v) + " clamped to " + std::to_string(clamped)});
      *b = clamped;
    }
    if (word_count(s.notes) > kNotesWordBudget) {
      report.warnings.push_back("subtask " + std::to_string(s.id) + " notes exceed " +
                                std::to_string(kNotesWordBudget) + " words");
    }
  }

  const auto before = segs;
  sort_by_start(segs);
  if (segs != before) {
    report.repairs.push_back({Repair::Kind::Reorder, segs.front().id, "subtasks sorted by start_frame"});
  }

  // Walk valid spans in start order. A later start truncates the previous span;
  // a shared start keeps the earlier-listed span and pushes the later one.
  SubtaskSegment* prev = nullptr;
  for (auto& s : segs) {
    if (!s.is_valid()) continue;
    if (prev == nullptr || *s.start_frame > *prev->complete_frame) {
      prev = &s;
      continue;
    }
    if (strict) {
      throw Error(ErrorCode::OverlapError, "subtask " + std::to_string(prev->id) + " " + span_str(*prev) +
                                               " overlaps subtask " + std::to_string(s.id) + " " +
                                               span_str(s));
    }
    if (*s.start_frame > *prev->start_frame) {
      const std::string old = span_str(*prev);
      prev->complete_frame = *s.start_frame - 1;
      report.repairs.push_back({Repair::Kind::Trim, prev->id, old + " -> " + span_str(*prev)});
      prev = &s;
      continue;
    }
    const std::string old = span_str(s);
    const int pushed = *prev->complete_frame + 1;
    if (pushed > *s.complete_frame) {
      s.start_frame.reset();
      s.complete_frame.reset();
      report.repairs.push_back({Repair::Kind::Drop, s.id, old + " fully covered by subtask " +
                                                              std::to_string(prev->id)});
      continue;
    }
    s.start_frame = pushed;
    report.repairs.push_back({Repair::Kind::Trim, s.id, old + " -> " + span_str(s)});
    prev = &s;
  }
  sort_by_start(segs);
  return out;
}

std::vector<std::optional<int>> expand_segments_to_frames(const SegmentationResult& seg,
                                                          int num_frames) {
  std::vector<std::optional<int>> frames(static_cast<std::size_t>(std::max(num_frames, 0)));
  for (const auto& s : seg.subtasks) {
    if (!s.is_valid()) continue;
    if (*s.start_frame < 0 || *s.complete_frame >= num_frames || *s.start_frame > *s.complete_frame) {
      throw Error(ErrorCode::UnvalidatedInput, "subtask " + std::to_string(s.id) + " span " +
                                                   span_str(s) + " is not within the trajectory");
    }
    for (int t = *s.start_frame; t <= *s.complete_frame; ++t) {
      if (frames[t]) {
        throw Error(ErrorCode::UnvalidatedInput, "frame " + std::to_string(t) + " covered by subtasks " +
                                                     std::to_string(*frames[t]) + " and " +
                                                     std::to_string(s.id));
      }
      frames[t] = s.id;
    }
  }
  return frames;
}

PropagationResult propagate_keyframe_reasoning(std::span<const AnnotationRecord> keyframe_records,
                                               std::span<const std::optional<int>> frame_assignment,
                                               const EpisodeRef& episode,
                                               const std::map<int, std::string>& subtask_names) {
  const int n = static_cast<int>(frame_assignment.size());
  std::vector<const AnnotationRecord*> keyframe_at(n, nullptr);
  for (const auto& r : keyframe_records) {
    if (r.frame_id < 0 || r.frame_id >= n || !frame_assignment[r.frame_id]) continue;
    if (keyframe_at[r.frame_id] == nullptr) keyframe_at[r.frame_id] = &r;
  }

  PropagationResult out;
  int t = 0;
  while (t < n) {
    if (!frame_assignment[t]) {
      ++t;
      continue;
    }
    const int id = *frame_assignment[t];
    int end = t;
    while (end + 1 < n && frame_assignment[end + 1] == id) ++end;

    std::vector<int> keys;
    for (int u = t; u <= end; ++u) {
      if (keyframe_at[u] != nullptr) keys.push_back(u);
    }
    if (keys.empty()) {
      out.report.spans_without_keyframe.push_back(id);
      out.report.frames_without_reasoning += end - t + 1;
      std::optional<std::string> name;
      if (auto it = subtask_names.find(id); it != subtask_names.end()) name = it->second;
      for (int u = t; u <= end; ++u) {
        AnnotationRecord r;
        r.episode = episode;
        r.frame_id = u;
        r.subtask_id = id;
        r.subtask_name = name;
        r.reasoning_source = ReasoningSource::Propagated;
        out.records.push_back(std::move(r));
      }
    } else {
      std::size_t k = 0;
      for (int u = t; u <= end; ++u) {
        // keys ascending: advance while the next keyframe is strictly nearer
        while (k + 1 < keys.size() && std::abs(keys[k + 1] - u) < std::abs(keys[k] - u)) ++k;
        AnnotationRecord r = *keyframe_at[keys[k]];
        r.episode = episode;
        r.frame_id = u;
        r.subtask_id = id;
        if (keys[k] == u) {
          r.reasoning_source = ReasoningSource::Keyframe;
        } else {
          r.reasoning_source = ReasoningSource::Propagated;
          r.grounding_boxes.clear();
        }
        out.records.push_back(std::move(r));
      }
    }
    t = end + 1;
  }
  return out;
}

std::vector<std::string> remaining_at(const SegmentationResult& seg, int frame) {
  std::vector<std::string> out;
  for (const auto& s : seg.subtasks) {
    if (s.complete_frame && *s.complete_frame <= frame) continue;
    out.push_back(s.name);
  }
  return out;
}

}  // namespace progkit
