#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>

#include "progkit/error.hpp"
#include "progkit/splits.hpp"

using namespace progkit;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::IoError;
}

// 3 tasks x {2 successes, type A twice, type B once}
std::vector<TrajectoryTag> tag_corpus() {
  std::vector<TrajectoryTag> tags;
  for (int k = 0; k < 3; ++k) {
    const std::string task = "task" + std::to_string(k);
    for (int i = 0; i < 2; ++i) tags.push_back({task + "/s" + std::to_string(i), task, Outcome::Success, std::nullopt});
    for (int i = 0; i < 2; ++i) tags.push_back({task + "/fa" + std::to_string(i), task, Outcome::Failure, "A"});
    tags.push_back({task + "/fb0", task, Outcome::Failure, "B"});
  }
  return tags;
}

std::vector<TrajectoryProgress> linear(int T, const std::string& id = "a", const std::string& task = "t") {
  TrajectoryProgress p{id, task, {}};
  for (int t = 0; t < T; ++t) p.values.push_back(static_cast<double>(t) / (T - 1));
  return {p};
}

}  // namespace

TEST(Splits, Sizes) {
  const auto tags = tag_corpus();
  const auto succ = build_oneshot_splits(tags, SplitMode::Succ, 0);
  EXPECT_EQ(succ.train.size(), 3U);
  const auto both = build_oneshot_splits(tags, SplitMode::SuccFail, 0);
  EXPECT_EQ(both.train.size(), 9U);
  std::map<std::string, int> per_task;
  for (const auto& id : succ.train) EXPECT_NE(id.find("/s"), std::string::npos);
  for (const auto& id : both.train) ++per_task[id.substr(0, id.find('/'))];
  for (const auto& [task, n] : per_task) EXPECT_EQ(n, 3) << task;
}

TEST(Splits, PartitionAndSeedStability) {
  const auto tags = tag_corpus();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = build_oneshot_splits(tags, SplitMode::SuccFail, seed);
    const auto b = build_oneshot_splits(tags, SplitMode::SuccFail, seed);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.test, b.test);
    std::set<std::string> all(a.train.begin(), a.train.end());
    for (const auto& id : a.test) EXPECT_TRUE(all.insert(id).second);
    EXPECT_EQ(all.size(), tags.size());
  }
  // input order does not matter
  auto shuffled = tags;
  std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(3));
  EXPECT_EQ(build_oneshot_splits(shuffled, SplitMode::SuccFail, 4).train,
            build_oneshot_splits(tags, SplitMode::SuccFail, 4).train);
}

TEST(Splits, Errors) {
  auto tags = tag_corpus();
  std::erase_if(tags, [](const TrajectoryTag& t) { return t.task == "task1" && t.outcome == Outcome::Success; });
  EXPECT_EQ(code_of([&] { build_oneshot_splits(tags, SplitMode::Succ, 0); }), ErrorCode::MissingSuccess);
  const auto full = tag_corpus();
  std::map<std::string, std::vector<std::string>> expected{{"task0", {"A", "B", "C"}}};
  EXPECT_EQ(code_of([&] { build_oneshot_splits(full, SplitMode::SuccFail, 0, &expected); }),
            ErrorCode::MissingFailureType);
  EXPECT_EQ(code_of([] { split_mode_from_string("fail"); }), ErrorCode::ConfigError);
}

TEST(Splits, TagsCsv) {
  std::istringstream in(
      "trajectory_id,task,outcome,failure_type\n"
      "x/1,\"pick, place\",success,\n"
      "x/2,\"pick, place\",failure,slip\n");
  const auto tags = parse_tags_csv(in);
  ASSERT_EQ(tags.size(), 2U);
  EXPECT_EQ(tags[0].task, "pick, place");
  EXPECT_EQ(tags[1].failure_type, "slip");
  std::ostringstream out;
  write_tags_csv(out, tags);
  std::istringstream back(out.str());
  EXPECT_EQ(parse_tags_csv(back).size(), 2U);

  for (const char* bad : {"a,t,maybe,\n", "a,t,failure,\n", "a,t,success,slip\n", "a,t,success,\na,t,success,\n"}) {
    std::istringstream b(std::string("trajectory_id,task,outcome,failure_type\n") + bad);
    EXPECT_EQ(code_of([&] { parse_tags_csv(b); }), ErrorCode::InvalidTag) << bad;
  }
}

TEST(Rft, LinearTieBreak) {
  const auto labels = rft_advantage_labels(linear(10), {3, 0.3});
  ASSERT_EQ(labels.size(), 10U);
  for (int t = 0; t < 10; ++t) EXPECT_EQ(labels[t].positive, t < 3) << t;
  EXPECT_NEAR(labels[0].advantage, 3.0 / 9, 1e-12);
  EXPECT_NEAR(labels[8].advantage, 1.0 / 9, 1e-12);
  EXPECT_EQ(labels[9].advantage, 0.0);
}

TEST(Rft, HorizonBeyondLength) {
  const std::vector<TrajectoryProgress> tr{{"a", "t", {0.0, 0.1, 0.5, 0.6, 1.0}}};
  const auto labels = rft_advantage_labels(tr, {50, 0.4});
  for (int t = 0; t < 5; ++t) EXPECT_DOUBLE_EQ(labels[t].advantage, 1.0 - tr[0].values[t]);
  EXPECT_TRUE(labels[0].positive);
  EXPECT_TRUE(labels[1].positive);
  EXPECT_FALSE(labels[2].positive);
}

TEST(Rft, TopFractionOneAllPositive) {
  for (const auto& l : rft_advantage_labels(linear(7), {2, 1.0})) EXPECT_TRUE(l.positive);
}

TEST(Rft, CountsPerTaskAndTelescoping) {
  std::mt19937_64 rng(17);
  std::vector<TrajectoryProgress> trs;
  for (int i = 0; i < 12; ++i) {
    TrajectoryProgress p{"tr" + std::to_string(i), "task" + std::to_string(i % 3), {}};
    const int T = std::uniform_int_distribution<int>(1, 40)(rng);
    for (int t = 0; t < T; ++t) p.values.push_back(std::uniform_real_distribution<double>(0, 1)(rng));
    trs.push_back(p);
  }
  for (double frac : {0.1, 0.3, 0.55, 1.0}) {
    const auto labels = rft_advantage_labels(trs, {1, frac});
    std::map<std::string, std::pair<std::size_t, std::size_t>> counts;
    for (const auto& l : labels) {
      ++counts[l.task].first;
      counts[l.task].second += l.positive ? 1 : 0;
    }
    for (const auto& [task, c] : counts) {
      EXPECT_EQ(c.second, static_cast<std::size_t>(std::ceil(frac * static_cast<double>(c.first) - 1e-9))) << task;
    }
    std::map<std::string, double> sums;
    for (const auto& l : labels) sums[l.trajectory_id] += l.advantage;
    for (const auto& p : trs) EXPECT_NEAR(sums[p.trajectory_id], p.values.back() - p.values.front(), 1e-12);
  }
}

TEST(Rft, TopCountAndConfig) {
  EXPECT_EQ(top_count(0.3, 10), 3U);
  EXPECT_EQ(top_count(0.3, 11), 4U);
  EXPECT_EQ(top_count(1.0, 5), 5U);
  EXPECT_EQ(code_of([] { AdvantageConfig{0, 0.3}.validate(); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { AdvantageConfig{5, 0.0}.validate(); }), ErrorCode::ConfigError);
  const std::vector<TrajectoryProgress> empty{{"a", "t", {}}};
  EXPECT_EQ(code_of([&] { rft_advantage_labels(empty); }), ErrorCode::EmptyTask);
}

TEST(Rft, PerTrajectoryMode) {
  std::vector<TrajectoryProgress> trs{{"a", "t", {0.0, 0.1, 0.2}}, {"b", "t", {0.0, 0.5, 1.0}}, {"c", "t", {0.5, 0.5, 0.5}}};
  AdvantageConfig cfg{1, 0.3, true};
  const auto labels = rft_advantage_labels(trs, cfg);
  for (const auto& l : labels) EXPECT_EQ(l.positive, l.trajectory_id == "b");
}
