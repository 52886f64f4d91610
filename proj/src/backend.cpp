#include "progkit/backend.hpp"

#include <array>
#include <cctype>
#include <sstream>

#include "progkit/error.hpp"

namespace progkit {

using nlohmann::json;

std::uint64_t stable_hash(std::string_view text, std::uint64_t seed) {
  std::uint64_t h = 14695981039346656037ULL ^ (seed * 0x9E3779B97F4A7C15ULL);
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

const json& script_of(const EpisodeContext* ctx) {
  static const json empty = json::object();
  if (ctx == nullptr) return empty;
  auto it = ctx->metadata.find("script");
  return it != ctx->metadata.end() && it->is_object() ? *it : empty;
}

void check_available(const EpisodeContext* ctx) {
  const auto& script = script_of(ctx);
  if (script.value("unavailable", false)) {
    throw Error(ErrorCode::BackendUnavailable,
                "mock backend scripted as unavailable for " + ctx->episode.trajectory_id());
  }
}

std::optional<std::string> fault(const EpisodeContext* ctx, const char* stage) {
  const auto& script = script_of(ctx);
  auto faults = script.find("faults");
  if (faults == script.end() || !faults->is_object() || !faults->contains(stage)) return std::nullopt;
  return (*faults)[stage].get<std::string>();
}

std::vector<std::string> scripted_plan(const EpisodeContext* ctx) {
  const auto& script = script_of(ctx);
  if (script.contains("plan")) return script["plan"].get<std::vector<std::string>>();
  return {"Grasp the object", "Place the object onto the target"};
}

std::string lower_first(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(s[0])));
  return s;
}

}  // namespace

std::string MockBackend::plan(const PlanRequest& request) {
  check_available(request.context);
  if (auto raw = fault(request.context, "plan")) return *raw;
  const auto steps = scripted_plan(request.context);
  std::string out;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    out += std::to_string(i + 1) + ". " + steps[i] + "\n";
  }
  return out;
}

std::string MockBackend::segment(const SegmentRequest& request) {
  check_available(request.context);
  if (auto raw = fault(request.context, "segment")) return *raw;
  const auto& script = script_of(request.context);
  const auto& episode = request.context->episode;

  json subtasks = json::array();
  if (script.contains("segments")) {
    for (const auto& s : script["segments"]) {
      subtasks.push_back({{"id", s.at("id")},
                          {"name", s.at("name")},
                          {"start_frame", s.value("start_frame", json(nullptr))},
                          {"complete_frame", s.value("complete_frame", json(nullptr))},
                          {"notes", s.value("notes", std::string())}});
    }
  } else {
    // no script: split the trajectory evenly over the plan
    const int n = static_cast<int>(request.plan.size());
    const int frames = std::max(episode.num_frames, 1);
    for (int i = 0; i < n; ++i) {
      subtasks.push_back({{"id", i + 1},
                          {"name", request.plan[i]},
                          {"start_frame", i * frames / n},
                          {"complete_frame", (i + 1) * frames / n - 1},
                          {"notes", ""}});
    }
  }
  json body = {{"task", episode.instruction},
               {"subtasks", subtasks},
               {"overall_notes", script.value("overall_notes", std::string())}};
  const std::string text = body.dump(2);
  if ((stable_hash(episode.trajectory_id(), seed_) & 1U) != 0U) return "```json\n" + text + "\n```";
  return text;
}

std::string MockBackend::reason(const ReasonRequest& request) {
  check_available(request.context);
  if (auto raw = fault(request.context, "reason")) return *raw;
  static constexpr std::array<const char*, 3> kOpeners = {"Image shows", "The image shows", "This frame shows"};
  const auto& episode = request.context->episode;
  const auto h = stable_hash(episode.trajectory_id() + "#" + std::to_string(request.frame.index), seed_);
  const std::string opener = kOpeners[h % kOpeners.size()];
  const std::string frame = std::to_string(request.frame.index);

  std::ostringstream out;
  switch (request.state) {
    case CompletionState::Finished:
      out << opener << " the scene at frame " << frame << " with every planned subtask done. "
          << "This task is finished because all subtasks of '" << episode.instruction << "' are complete.";
      break;
    case CompletionState::GivenUp:
      out << opener << " the robot stopped at frame " << frame << ". This task is not finished because '"
          << (request.remaining.empty() ? std::string("the task") : request.remaining.front())
          << "' was never completed.";
      break;
    case CompletionState::Unfinished: {
      out << opener << " the robot at frame " << frame << " while working on '"
          << (request.remaining.empty() ? std::string("the task") : request.remaining.front()) << "'. "
          << "This task is not finished because " << request.remaining.size() << " subtask"
          << (request.remaining.size() == 1 ? "" : "s") << " remain. The robot should ";
      for (std::size_t i = 0; i < request.remaining.size(); ++i) {
        if (i > 0) out << ", then ";
        out << lower_first(request.remaining[i]);
      }
      out << ".";
      break;
    }
  }
  const auto& script = script_of(request.context);
  if (auto boxes = script.find("boxes"); boxes != script.end() && boxes->contains(frame)) {
    for (const auto& b : (*boxes)[frame]) {
      out << "\n<box>" << b.at("label").get<std::string>() << ": " << b.at("x_min").get<double>() << ", "
          << b.at("y_min").get<double>() << ", " << b.at("x_max").get<double>() << ", "
          << b.at("y_max").get<double>() << "</box>";
    }
  }
  return out.str();
}

}  // namespace progkit
