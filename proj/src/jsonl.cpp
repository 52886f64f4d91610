#include "progkit/jsonl.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <istream>
#include <ostream>

#include "progkit/error.hpp"

namespace progkit {

using nlohmann::json;

namespace {

constexpr std::array<const char*, 14> kKnownKeys = {
    "dataset_name", "episode_id",         "camera_key",      "frame_id",
    "subtask_id",   "subtask_name",       "reasoning",       "reasoning_source",
    "completion",   "remaining_subtasks", "grounding_boxes", "progress",
    "num_frames",   "instruction"};

[[noreturn]] void violation(std::size_t line, const std::string& field, const std::string& what) {
  std::string where = line > 0 ? "line " + std::to_string(line) + ": " : std::string();
  throw Error(ErrorCode::SchemaViolation, where + "field `" + field + "` " + what);
}

const json& require(const json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end()) violation(line, key, "is missing");
  return *it;
}

std::string require_string(const json& j, const char* key, std::size_t line) {
  const auto& v = require(j, key, line);
  if (!v.is_string()) violation(line, key, "must be a string");
  return v.get<std::string>();
}

int require_int(const json& j, const char* key, std::size_t line) {
  const auto& v = require(j, key, line);
  if (!v.is_number_integer()) violation(line, key, "must be an integer");
  return v.get<int>();
}

double require_number(const json& j, const char* key, std::size_t line) {
  const auto& v = require(j, key, line);
  if (!v.is_number()) violation(line, key, "must be a number");
  return v.get<double>();
}

}  // namespace

json to_json(const AnnotationRecord& r) {
  json j = r.extra.is_object() ? r.extra : json::object();
  j["dataset_name"] = r.episode.dataset_name;
  j["episode_id"] = r.episode.episode_id;
  j["camera_key"] = r.episode.camera_key;
  if (r.episode.num_frames > 0) j["num_frames"] = r.episode.num_frames;
  if (!r.episode.instruction.empty()) j["instruction"] = r.episode.instruction;
  j["frame_id"] = r.frame_id;
  j["subtask_id"] = r.subtask_id ? json(*r.subtask_id) : json(nullptr);
  j["subtask_name"] = r.subtask_name ? json(*r.subtask_name) : json(nullptr);
  j["reasoning"] = r.reasoning;
  j["reasoning_source"] = std::string(to_string(r.reasoning_source));
  j["completion"] = std::string(to_string(r.completion));
  j["remaining_subtasks"] = r.remaining_subtasks;
  json boxes = json::array();
  for (const auto& b : r.grounding_boxes) {
    boxes.push_back({{"label", b.label}, {"x_min", b.x_min}, {"y_min", b.y_min},
                     {"x_max", b.x_max}, {"y_max", b.y_max}});
  }
  j["grounding_boxes"] = std::move(boxes);
  j["progress"] = r.progress ? json(*r.progress) : json(nullptr);
  return j;
}

AnnotationRecord record_from_json(const json& j, std::size_t line) {
  if (!j.is_object()) violation(line, "<record>", "must be a JSON object");
  AnnotationRecord r;
  r.episode.dataset_name = require_string(j, "dataset_name", line);
  r.episode.episode_id = require_string(j, "episode_id", line);
  r.episode.camera_key = require_string(j, "camera_key", line);
  if (r.episode.dataset_name.empty()) violation(line, "dataset_name", "must be non-empty");
  if (r.episode.episode_id.empty()) violation(line, "episode_id", "must be non-empty");
  if (r.episode.camera_key.empty()) violation(line, "camera_key", "must be non-empty");
  if (j.contains("num_frames")) {
    r.episode.num_frames = require_int(j, "num_frames", line);
    if (r.episode.num_frames < 1) violation(line, "num_frames", "must be >= 1");
  }
  if (j.contains("instruction")) r.episode.instruction = require_string(j, "instruction", line);

  r.frame_id = require_int(j, "frame_id", line);
  if (r.frame_id < 0) violation(line, "frame_id", "must be >= 0");
  if (r.episode.num_frames > 0 && r.frame_id >= r.episode.num_frames) {
    violation(line, "frame_id", "must be < num_frames");
  }

  const auto& sid = require(j, "subtask_id", line);
  if (sid.is_number_integer()) {
    r.subtask_id = sid.get<int>();
  } else if (!sid.is_null()) {
    violation(line, "subtask_id", "must be an integer or null");
  }
  const auto& sname = require(j, "subtask_name", line);
  if (sname.is_string()) {
    r.subtask_name = sname.get<std::string>();
  } else if (!sname.is_null()) {
    violation(line, "subtask_name", "must be a string or null");
  }

  r.reasoning = require_string(j, "reasoning", line);
  const auto source = require_string(j, "reasoning_source", line);
  if (source == "keyframe") {
    r.reasoning_source = ReasoningSource::Keyframe;
  } else if (source == "propagated") {
    r.reasoning_source = ReasoningSource::Propagated;
  } else {
    violation(line, "reasoning_source", "must be \"keyframe\" or \"propagated\"");
  }
  try {
    r.completion = completion_from_string(require_string(j, "completion", line));
  } catch (const Error&) {
    violation(line, "completion", "must be one of unfinished|finished|given_up");
  }

  const auto& remaining = require(j, "remaining_subtasks", line);
  if (!remaining.is_array()) violation(line, "remaining_subtasks", "must be an array");
  for (const auto& item : remaining) {
    if (!item.is_string()) violation(line, "remaining_subtasks", "must contain strings");
    r.remaining_subtasks.push_back(item.get<std::string>());
  }

  const auto& boxes = require(j, "grounding_boxes", line);
  if (!boxes.is_array()) violation(line, "grounding_boxes", "must be an array");
  for (const auto& b : boxes) {
    if (!b.is_object()) violation(line, "grounding_boxes", "entries must be objects");
    GroundingBox box;
    box.label = require_string(b, "label", line);
    box.x_min = require_number(b, "x_min", line);
    box.y_min = require_number(b, "y_min", line);
    box.x_max = require_number(b, "x_max", line);
    box.y_max = require_number(b, "y_max", line);
    if (!box.is_valid()) violation(line, "grounding_boxes", "box '" + box.label + "' is degenerate or outside [0,1]");
    r.grounding_boxes.push_back(std::move(box));
  }

  const auto& progress = require(j, "progress", line);
  if (progress.is_number()) {
    const double p = progress.get<double>();
    if (!(p >= 0.0 && p <= 1.0)) violation(line, "progress", "must lie in [0,1]");
    r.progress = p;
  } else if (!progress.is_null()) {
    violation(line, "progress", "must be a number or null");
  }

  for (const auto& [key, value] : j.items()) {
    if (std::find_if(kKnownKeys.begin(), kKnownKeys.end(),
                     [&](const char* k) { return key == k; }) == kKnownKeys.end()) {
      r.extra[key] = value;
    }
  }
  return r;
}

void write_jsonl(std::ostream& out, const std::vector<AnnotationRecord>& records) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

std::vector<AnnotationRecord> read_jsonl(std::istream& in) {
  std::vector<AnnotationRecord> records;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::SchemaViolation, "line " + std::to_string(line) + ": invalid JSON: " + e.what());
    }
    records.push_back(record_from_json(j, line));
  }
  return records;
}

void write_jsonl_file(const std::filesystem::path& path, const std::vector<AnnotationRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  write_jsonl(out, records);
}

std::vector<AnnotationRecord> read_jsonl_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  return read_jsonl(in);
}

std::vector<json> read_json_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::vector<json> rows;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(json::parse(text));
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::SchemaViolation,
                  path.string() + " line " + std::to_string(line) + ": invalid JSON: " + e.what());
    }
  }
  return rows;
}

void write_json_lines(const std::filesystem::path& path, const std::vector<json>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  for (const auto& row : rows) out << row.dump() << '\n';
}

}  // namespace progkit
