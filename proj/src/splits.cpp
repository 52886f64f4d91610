#include "progkit/splits.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <set>

#include "progkit/error.hpp"

namespace progkit {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c != '\r') {
      fields.back() += c;
    }
  }
  return fields;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::vector<TrajectoryTag> parse_tags_csv(std::istream& in) {
  std::vector<TrajectoryTag> tags;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (!header_seen) {
      header_seen = true;
      if (f.size() >= 1 && f[0] == "trajectory_id") continue;
    }
    auto bad = [&](const std::string& what) {
      return Error(ErrorCode::InvalidTag, "tags line " + std::to_string(line_no) + ": " + what);
    };
    if (f.size() < 3 || f.size() > 4) throw bad("expected 4 columns");
    TrajectoryTag t;
    t.trajectory_id = f[0];
    t.task = f[1];
    if (t.trajectory_id.empty() || t.task.empty()) throw bad("empty trajectory_id or task");
    if (f[2] == "success") {
      t.outcome = Outcome::Success;
    } else if (f[2] == "failure") {
      t.outcome = Outcome::Failure;
    } else {
      throw bad("outcome must be success or failure, got `" + f[2] + "`");
    }
    if (f.size() == 4 && !f[3].empty()) t.failure_type = f[3];
    if (t.outcome == Outcome::Failure && !t.failure_type) throw bad("failure without failure_type");
    if (t.outcome == Outcome::Success && t.failure_type) throw bad("success with a failure_type");
    if (!ids.insert(t.trajectory_id).second) throw bad("duplicate trajectory_id `" + t.trajectory_id + "`");
    tags.push_back(std::move(t));
  }
  return tags;
}

std::vector<TrajectoryTag> read_tags_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  return parse_tags_csv(in);
}

void write_tags_csv(std::ostream& out, std::span<const TrajectoryTag> tags) {
  out << "trajectory_id,task,outcome,failure_type\n";
  for (const auto& t : tags) {
    out << csv_field(t.trajectory_id) << ',' << csv_field(t.task) << ','
        << (t.outcome == Outcome::Success ? "success" : "failure") << ',' << csv_field(t.failure_type.value_or(""))
        << '\n';
  }
}

SplitMode split_mode_from_string(const std::string& text) {
  if (text == "succ") return SplitMode::Succ;
  if (text == "succ_fail") return SplitMode::SuccFail;
  throw Error(ErrorCode::ConfigError, "split mode must be succ or succ_fail, got `" + text + "`");
}

OneShotSplit build_oneshot_splits(std::span<const TrajectoryTag> tags, SplitMode mode, std::uint64_t seed,
                                  const std::map<std::string, std::vector<std::string>>* expected_failure_types) {
  std::map<std::string, std::vector<std::string>> successes;
  std::map<std::string, std::map<std::string, std::vector<std::string>>> failures;
  std::set<std::string> tasks;
  for (const auto& t : tags) {
    tasks.insert(t.task);
    if (t.outcome == Outcome::Success) successes[t.task].push_back(t.trajectory_id);
    else failures[t.task][*t.failure_type].push_back(t.trajectory_id);
  }

  std::mt19937_64 rng(seed);
  auto pick = [&](std::vector<std::string> ids) {
    std::sort(ids.begin(), ids.end());
    return ids[rng() % ids.size()];
  };

  std::set<std::string> train;
  for (const auto& task : tasks) {
    auto it = successes.find(task);
    if (it == successes.end()) throw Error(ErrorCode::MissingSuccess, "task `" + task + "` has no successful trajectory");
    train.insert(pick(it->second));
    if (mode != SplitMode::SuccFail) continue;

    std::set<std::string> types;
    if (expected_failure_types != nullptr) {
      if (auto e = expected_failure_types->find(task); e != expected_failure_types->end()) {
        types.insert(e->second.begin(), e->second.end());
      }
    }
    for (const auto& [type, _] : failures[task]) types.insert(type);
    for (const auto& type : types) {
      auto f = failures[task].find(type);
      if (f == failures[task].end()) {
        throw Error(ErrorCode::MissingFailureType,
                    "task `" + task + "` has no trajectory with failure type `" + type + "`");
      }
      train.insert(pick(f->second));
    }
  }

  OneShotSplit split;
  split.train.assign(train.begin(), train.end());
  for (const auto& t : tags) {
    if (train.count(t.trajectory_id) == 0U) split.test.push_back(t.trajectory_id);
  }
  std::sort(split.test.begin(), split.test.end());
  return split;
}

void AdvantageConfig::validate() const {
  if (horizon < 1) throw Error(ErrorCode::ConfigError, "horizon must be >= 1");
  if (!(top_fraction > 0.0 && top_fraction <= 1.0)) throw Error(ErrorCode::ConfigError, "top_fraction must lie in (0,1]");
}

std::size_t top_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
}

namespace {

// Advantages of an exactly linear series differ in the last bits; rank on a
// 1e-12 grid so they tie and the id order decides.
long long rank_key(double advantage) { return std::llround(advantage * 1e12); }

}  // namespace

std::vector<AdvantageLabel> rft_advantage_labels(std::span<const TrajectoryProgress> trajectories,
                                                 const AdvantageConfig& config) {
  config.validate();
  std::map<std::string, std::vector<const TrajectoryProgress*>> by_task;
  for (const auto& t : trajectories) by_task[t.task].push_back(&t);

  std::vector<AdvantageLabel> out;
  for (auto& [task, trajs] : by_task) {
    std::sort(trajs.begin(), trajs.end(),
              [](const TrajectoryProgress* a, const TrajectoryProgress* b) { return a->trajectory_id < b->trajectory_id; });
    const std::size_t first = out.size();
    for (const auto* tr : trajs) {
      const int T = static_cast<int>(tr->values.size());
      for (int t = 0; t < T; ++t) {
        const int ahead = std::min(t + config.horizon, T - 1);
        out.push_back({tr->trajectory_id, task, t, tr->values[ahead] - tr->values[t], false});
      }
    }
    const std::size_t n = out.size() - first;
    if (n == 0) throw Error(ErrorCode::EmptyTask, "task `" + task + "` has no progress samples");

    if (!config.per_trajectory) {
      std::vector<std::size_t> order(n);
      for (std::size_t i = 0; i < n; ++i) order[i] = first + i;
      // samples are already in (trajectory_id, t) order, so a stable sort keeps that as the tie-break
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return rank_key(out[a].advantage) > rank_key(out[b].advantage); });
      const std::size_t k = top_count(config.top_fraction, n);
      for (std::size_t i = 0; i < k; ++i) out[order[i]].positive = true;
    } else {
      std::vector<std::pair<long long, std::size_t>> means;
      for (std::size_t ti = 0; ti < trajs.size(); ++ti) {
        const auto& v = trajs[ti]->values;
        double sum = 0.0;
        const int T = static_cast<int>(v.size());
        for (int t = 0; t < T; ++t) sum += v[std::min(t + config.horizon, T - 1)] - v[t];
        means.emplace_back(T > 0 ? rank_key(sum / T) : std::numeric_limits<long long>::min(), ti);
      }
      std::stable_sort(means.begin(), means.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
      std::set<std::string> chosen;
      const std::size_t k = top_count(config.top_fraction, trajs.size());
      for (std::size_t i = 0; i < k; ++i) chosen.insert(trajs[means[i].second]->trajectory_id);
      for (std::size_t i = first; i < out.size(); ++i) out[i].positive = chosen.count(out[i].trajectory_id) != 0U;
    }
  }
  return out;
}

}  // namespace progkit
