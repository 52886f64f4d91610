#include "progkit/prompts.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace progkit {

namespace {

constexpr const char* kPlanTemplate = R"(I will give you a robot task and a video showing the robot arm performing the task.
You need to analyze actions of the robot arm from the video and decompose the task
into a sequence of detailed sub-tasks. The sequence of sub-tasks should lead to the
completion of the overall task.

###
Grasp [specific object]
e.g. "Grasp the red block"
Explain: Use this pattern when the robot isn't holding anything and needs to pick up
an object, before performing other actions like placing or lifting.
###
Place [specific object] onto / into [specific location]
e.g. "Place the cup onto the table" or "Place the screwdriver into the tool rack."
Explain: Use this pattern when the robot is holding an object and needs to put it
down at a specific location.
###
Push [specific object] [forward / backward / left / right]
e.g., "Push the blue block forward"
Explain: Use this pattern when the robot needs to move an object in a specific
direction by applying force to it, without lifting or grasping it. "Push" and
("Grasp", "Place") are mutually exclusive.
###
Tilt the gripper
e.g. "Tilt the gripper to pour the liquid" or "Tilt the gripper slightly to the left"
Explain: Use this pattern when the robot needs to adjust the angle of its gripper,
either to pour liquid or position the gripper for some specific task.
###
Hang [specific object] on / above [specific location]
e.g. "Hang the coat on the hook" or "Hang the cup above the table"
Explain: Use this pattern when the robot needs to suspend an object from a specific
location, such as hanging a coat on a hook or a cup above a table.
###
Press [specific object]
e.g., "Press the button" or "Press the power switch until it clicks."
###
Open [specific object]
e.g. "Open the door slowly"
###
Close [specific object]
e.g., "Close the lid securely"
###
Rotate [specific object]
e.g., "Rotate the knob clockwise"
###

All sub-tasks must be in exactly one of the patterns above, and should follow the
Explain for each pattern. There is no need to include the robot arm itself as an
object in the sub-tasks.

You should output sub-tasks in a numbered list format, starting from 1. Each line
contains one sub-task with a leading number and a period. No extra text or
explanation.

Task: {task}
Output:)";

constexpr const char* kSegmentationTemplate = R"(You will be shown a VIDEO of a robot task and an UNORDERED list of planned sub-tasks.

Task: "{task}"
Planned sub-tasks:
{plans}

OBJECTIVE:
For each planned sub-task, if present, mark the frames where it starts and finishes.
If a sub-task is started but not finished, set complete_frame=null. If not present
at all, set both start_frame=null and complete_frame=null, and notes="not present".
If the video shows any action was interrupted and the overall task was not completed,
set overall_notes="task not completed".

OUTPUT FORMAT:
{
  "task": "<same as input task>",
  "subtasks": [
    {"id":1, "notes":"<<=60 words optional>",
     "start_frame":<int|null>, "complete_frame":<int|null>,
     "name":"<same text from plans>"},
    ...
  ],
  "overall_notes":"<<=30 words optional>"
}

HINTS:
- Find the changes in effector pose and object motion as candidate start/complete frames.
- The start frame can be picked slightly earlier and the complete frame slightly later
  to ensure the action is fully captured.
- If multiple candidates exist, pick the final success. If retries occur, record the
  final success.
- Use the last frame of the video as reference for overall_notes.

Now process the provided video and planned sub-tasks and return the JSON result ONLY.)";

constexpr const char* kUnfinishedTemplate = R"(The image shows a robot performing a task: '{task}', which may be incomplete.
Remaining subtasks: '{rest_sub_task}'.
Explain why it's unfinished and briefly describe the next steps based on image details.

Output (<=150 words, 3 sentences):
<analysis with image details>. This task is not finished <short reason>.
<one-sentence summary of next steps>.

Example:
Task: 'put all the green objects on the pink plate.'
Image: a green apple in robot arm, a green pear on blue plate.
Output:
Image shows a green apple held by the robot and a green pear on the blue plate.
This task is not finished because both green objects are not yet on the pink plate.
The robot should place the green apple on the pink plate, then move the green pear
from the blue plate to the pink plate.)";

constexpr const char* kFinishedTemplate = R"(The image shows a robot performing a task: '{task}', which is finished.
Explain briefly why it's completed based on image details.

Output (<=50 words, 2 sentences):
<analysis with image details>. This task is finished <short reason>.

Example:
Task: 'put all the green objects on the pink plate.'
Image: both green apple and pear on pink plate.
Output:
Image shows a green apple and pear on the pink plate. This task is finished because
all green objects are placed correctly.)";

constexpr const char* kGivenUpTemplate = R"(The image shows a robot performing a task: '{task}', which is not finished.
Explain briefly why it's unfinished based on image details.

Output (<=50 words, 2 sentences):
<analysis with image details>. This task is not finished <short reason>.

Example:
Task: 'put all the green objects on the pink plate.'
Image: a green apple held by the robot, a green pear on blue plate.
Output:
Image shows a green apple in the robot arm and a green pear on the blue plate.
This task is not finished because neither object has been placed on the pink plate.)";

constexpr std::array<std::string_view, 9> kActionVerbs = {
    "grasp", "place", "push", "tilt", "hang", "press", "open", "close", "rotate"};

std::string replace_all(std::string text, std::string_view key, const std::string& value) {
  std::size_t pos = 0;
  while ((pos = text.find(key, pos)) != std::string::npos) {
    text.replace(pos, key.size(), value);
    pos += value.size();
  }
  return text;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

bool starts_with_action_verb(const std::string& step) {
  std::string first;
  for (char c : step) {
    if (std::isalpha(static_cast<unsigned char>(c)) == 0) break;
    first.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return std::find(kActionVerbs.begin(), kActionVerbs.end(), first) != kActionVerbs.end();
}

}  // namespace

std::string render_plan_prompt(const std::string& task) { return replace_all(kPlanTemplate, "{task}", task); }

std::string render_segmentation_prompt(const std::string& task, const std::vector<std::string>& plan) {
  std::string plans;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    if (i > 0) plans += '\n';
    plans += std::to_string(i + 1) + ". " + plan[i];
  }
  return replace_all(replace_all(kSegmentationTemplate, "{task}", task), "{plans}", plans);
}

std::string render_reasoning_prompt(const std::string& task, CompletionState state,
                                    const std::vector<std::string>& remaining) {
  switch (state) {
    case CompletionState::Finished: return replace_all(kFinishedTemplate, "{task}", task);
    case CompletionState::GivenUp: return replace_all(kGivenUpTemplate, "{task}", task);
    case CompletionState::Unfinished: break;
  }
  std::string rest;
  for (std::size_t i = 0; i < remaining.size(); ++i) {
    if (i > 0) rest += "; ";
    rest += remaining[i];
  }
  return replace_all(replace_all(kUnfinishedTemplate, "{task}", task), "{rest_sub_task}", rest);
}

int reasoning_word_budget(CompletionState state) { return state == CompletionState::Unfinished ? 150 : 50; }

TaskPlan parse_plan(const std::string& response) {
  static const std::regex item(R"(^\s*(\d+)\s*[.)](.*)$)");
  enum class Phase { Before, InList, After } phase = Phase::Before;
  TaskPlan plan;
  std::set<int> seen;
  std::istringstream in(response);
  std::string line;
  bool leading_prose = false;
  bool trailing_prose = false;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::smatch m;
    if (!std::regex_match(line, m, item)) {
      if (phase == Phase::Before) {
        leading_prose = true;
      } else {
        phase = Phase::After;
        trailing_prose = true;
      }
      continue;
    }
    if (phase == Phase::After) throw Error(ErrorCode::ParseError, "numbered item after trailing prose: '" + trim(line) + "'");
    phase = Phase::InList;
    const int index = std::stoi(m[1].str());
    const std::string text = trim(m[2].str());
    if (!seen.insert(index).second) throw Error(ErrorCode::ParseError, "duplicate plan index " + std::to_string(index));
    if (index != static_cast<int>(plan.steps.size()) + 1) {
      throw Error(ErrorCode::ParseError, "plan index " + std::to_string(index) + " out of sequence");
    }
    if (text.empty()) throw Error(ErrorCode::ParseError, "plan item " + std::to_string(index) + " has no description");
    if (!starts_with_action_verb(text)) plan.warnings.push_back("step " + std::to_string(index) + " does not use a known action verb: '" + text + "'");
    plan.steps.push_back(text);
  }
  if (plan.steps.empty()) throw Error(ErrorCode::ParseError, "no numbered plan items found");
  if (leading_prose) plan.warnings.emplace_back("discarded prose before the numbered list");
  if (trailing_prose) plan.warnings.emplace_back("discarded prose after the numbered list");
  return plan;
}

SegmentationResult parse_segmentation(const std::string& response) {
  using nlohmann::json;
  const auto open = response.find('{');
  const auto close = response.rfind('}');
  if (open == std::string::npos || close == std::string::npos || close < open) {
    throw Error(ErrorCode::ParseError, "no JSON object in segmentation response");
  }
  json j;
  try {
    j = json::parse(response.substr(open, close - open + 1));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, std::string("segmentation JSON: ") + e.what());
  }
  auto schema = [](const std::string& what) { throw Error(ErrorCode::SchemaViolation, "segmentation " + what); };
  if (!j.contains("task") || !j["task"].is_string()) schema("`task` must be a string");
  if (!j.contains("subtasks") || !j["subtasks"].is_array()) schema("`subtasks` must be an array");

  SegmentationResult seg;
  seg.task = j["task"].get<std::string>();
  if (j.contains("overall_notes")) {
    if (!j["overall_notes"].is_string()) schema("`overall_notes` must be a string");
    seg.overall_notes = j["overall_notes"].get<std::string>();
  }
  auto frame = [&](const json& s, const char* key) -> std::optional<int> {
    if (!s.contains(key)) schema(std::string("subtask missing `") + key + "`");
    const auto& v = s[key];
    if (v.is_null()) return std::nullopt;
    if (!v.is_number_integer()) schema(std::string("`") + key + "` must be an integer or null");
    return v.get<int>();
  };
  for (const auto& s : j["subtasks"]) {
    if (!s.is_object()) schema("subtask entries must be objects");
    SubtaskSegment seg_item;
    if (!s.contains("id") || !s["id"].is_number_integer()) schema("subtask `id` must be an integer");
    if (!s.contains("name") || !s["name"].is_string()) schema("subtask `name` must be a string");
    seg_item.id = s["id"].get<int>();
    seg_item.name = s["name"].get<std::string>();
    seg_item.start_frame = frame(s, "start_frame");
    seg_item.complete_frame = frame(s, "complete_frame");
    if (s.contains("notes")) {
      if (!s["notes"].is_string()) schema("subtask `notes` must be a string");
      seg_item.notes = s["notes"].get<std::string>();
    }
    seg.subtasks.push_back(std::move(seg_item));
  }
  return seg;
}

TaskPlan plan_task(const EpisodeContext& context, const std::vector<FrameInput>& sampled_frames,
                   AnnotatorBackend& backend) {
  if (sampled_frames.empty()) throw Error(ErrorCode::EmptyInput, "plan generation needs at least one frame");
  PlanRequest request{&context, render_plan_prompt(context.episode.instruction), sampled_frames};
  const std::string raw = backend.plan(request);
  try {
    return parse_plan(raw);
  } catch (const Error& e) {
    throw ResponseError(e.code(), e.what(), raw);
  }
}

ValidatedSegmentation segment_subtasks(const EpisodeContext& context, const std::vector<std::string>& plan,
                                       const std::vector<FrameInput>& indexed_frames, int num_frames,
                                       AnnotatorBackend& backend, ValidationPolicy policy) {
  SegmentRequest request{&context, plan, render_segmentation_prompt(context.episode.instruction, plan),
                         indexed_frames};
  const std::string raw = backend.segment(request);
  try {
    auto validated = validate_segmentation(parse_segmentation(raw), num_frames, policy);
    for (const auto& s : validated.segmentation.subtasks) {
      if (std::find(plan.begin(), plan.end(), s.name) == plan.end()) {
        validated.report.warnings.push_back("subtask " + std::to_string(s.id) + " name not in plan: '" + s.name + "'");
      }
    }
    return validated;
  } catch (const Error& e) {
    throw ResponseError(e.code(), e.what(), raw);
  }
}

KeyframeReasoning extract_grounding_boxes(const std::string& response) {
  static const std::regex tag(R"(<box>([\s\S]*?)</box>)");
  static const std::regex body(
      R"(^\s*([^:]+?)\s*:\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)\s*$)");
  KeyframeReasoning out;
  std::string text;
  auto last = response.cbegin();
  for (std::sregex_iterator it(response.begin(), response.end(), tag), end; it != end; ++it) {
    text.append(last, (*it)[0].first);
    last = (*it)[0].second;
    const std::string inner = (*it)[1].str();
    std::smatch m;
    if (!std::regex_match(inner, m, body)) {
      ++out.dropped_boxes;
      continue;
    }
    try {
      GroundingBox box{m[1].str(), std::stod(m[2].str()), std::stod(m[3].str()), std::stod(m[4].str()),
                       std::stod(m[5].str())};
      if (box.is_valid()) {
        out.boxes.push_back(std::move(box));
      } else {
        ++out.dropped_boxes;
      }
    } catch (const std::exception&) {
      ++out.dropped_boxes;
    }
  }
  text.append(last, response.cend());
  out.text = trim(text);
  return out;
}

KeyframeReasoning annotate_keyframe(const EpisodeContext& context, const FrameInput& frame,
                                    CompletionState state, const std::vector<std::string>& remaining,
                                    AnnotatorBackend& backend, const RetryPolicy& retry) {
  ReasonRequest request{&context, frame, state, remaining,
                        render_reasoning_prompt(context.episode.instruction, state, remaining)};
  const int attempts = std::max(1, retry.max_attempts);
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    auto result = extract_grounding_boxes(backend.reason(request));
    if (!result.text.empty()) {
      if (result.dropped_boxes > 0) {
        result.warnings.push_back("frame " + std::to_string(frame.index) + ": dropped " +
                                  std::to_string(result.dropped_boxes) + " invalid grounding boxes");
      }
      if (word_count(result.text) > reasoning_word_budget(state)) {
        result.warnings.push_back("frame " + std::to_string(frame.index) + ": reasoning exceeds " +
                                  std::to_string(reasoning_word_budget(state)) + " words");
      }
      return result;
    }
    if (attempt < attempts) std::this_thread::sleep_for(retry.backoff_base * (1 << (attempt - 1)));
  }
  throw ResponseError(ErrorCode::EmptyResponse,
                      "empty reasoning for frame " + std::to_string(frame.index) + " after " +
                          std::to_string(attempts) + " attempts",
                      "");
}

}  // namespace progkit
