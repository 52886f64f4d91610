#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "progkit/error.hpp"
#include "progkit/progress.hpp"
#include "progkit/vqa.hpp"

using namespace progkit;
using nlohmann::json;

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

// Dense records of one trajectory with labels filled by the progress labeler.
EpisodeAnnotations make_episode(int T, std::vector<std::pair<int, int>> spans, bool with_labels = true,
                                std::vector<double> diffs = {}) {
  EpisodeAnnotations ep;
  ep.episode = {"ds", "ep", "cam", T, "stack the cups"};
  ep.segmentation.task = ep.episode.instruction;
  int id = 1;
  const char* verbs[] = {"Grasp the cup", "Place the cup", "Push the tray", "Lift the lid", "Open the box"};
  for (auto [a, b] : spans) {
    SubtaskSegment s;
    s.id = id;
    s.name = verbs[(id - 1) % 5];
    s.start_frame = a;
    s.complete_frame = b;
    ep.segmentation.subtasks.push_back(s);
    ++id;
  }
  if (diffs.empty()) diffs.assign(T - 1, 1.0);
  const auto labels = progress_labels(ep.segmentation, diffs);
  const auto assign = expand_segments_to_frames(ep.segmentation, T);
  for (int t = 0; t < T; ++t) {
    AnnotationRecord r;
    r.episode = ep.episode;
    r.frame_id = t;
    r.subtask_id = assign[t];
    if (assign[t]) r.subtask_name = ep.segmentation.subtasks[*assign[t] - 1].name;
    r.remaining_subtasks = remaining_at(ep.segmentation, t);
    r.completion = r.remaining_subtasks.empty() ? CompletionState::Finished : CompletionState::Unfinished;
    if (with_labels) r.progress = labels.values[t];
    ep.records.push_back(r);
  }
  return ep;
}

SamplingConfig rate(double fps, double source_fps = 30.0) {
  SamplingConfig c;
  c.fps = fps;
  c.source_fps = source_fps;
  return c;
}

}  // namespace

TEST(Families, Codes) {
  EXPECT_EQ(family_code(VqaFamily::SegWithTask), "a1");
  EXPECT_EQ(family_from_code("b2"), VqaFamily::FuturePlan);
  EXPECT_EQ(family_from_code("progress"), VqaFamily::Progress);
  EXPECT_EQ(family_name(VqaFamily::NextStep), "next_step");
  EXPECT_EQ(code_of([] { family_from_code("z9"); }), ErrorCode::ConfigError);
}

TEST(Sampling, LengthAndRemap) {
  EXPECT_EQ(sampled_length(100, rate(3)), 10);
  EXPECT_EQ(sampled_length(3000, rate(2)), 200);
  SamplingConfig capped = rate(30);
  capped.max_frames = 64;
  EXPECT_EQ(sampled_length(1000, capped), 64);
  EXPECT_EQ(sampled_length(5, rate(1)), 1);
  EXPECT_EQ(source_to_sampled(30, 100, 10), 3);
  EXPECT_EQ(source_to_sampled(60, 100, 10), 6);
  EXPECT_EQ(sampled_to_source(3, 100, 10), 30);
}

TEST(Sampling, RemapMonotoneAndBounded) {
  std::mt19937_64 rng(2);
  for (int iter = 0; iter < 200; ++iter) {
    const int T = std::uniform_int_distribution<int>(1, 2000)(rng);
    const int S = std::uniform_int_distribution<int>(1, T)(rng);
    int prev = -1;
    for (int i = 0; i < T; ++i) {
      const int j = source_to_sampled(i, T, S);
      EXPECT_GE(j, prev);
      EXPECT_LT(j, S);
      prev = j;
    }
  }
}

TEST(Sampling, WindowFrames) {
  EXPECT_EQ(window_frames(100, rate(2)), (std::vector<int>{55, 70, 85, 100}));
  EXPECT_EQ(window_frames(20, rate(2)), (std::vector<int>{5, 20}));
  EXPECT_EQ(window_frames(0, rate(2)), (std::vector<int>{0}));
}

TEST(Segmentation, TargetSchemaAndMarkers) {
  const auto ep = make_episode(100, {{30, 59}, {60, 99}});
  const auto s = gen_action_segmentation(ep, true, rate(3));
  const auto target = json::parse(s.target);
  ASSERT_EQ(target.size(), 2U);
  EXPECT_EQ(target[0]["start_frame"], 3);
  EXPECT_EQ(target[1]["start_frame"], 6);
  for (const auto& item : target) {
    EXPECT_EQ(item.size(), 3U);
    EXPECT_TRUE(item.contains("action_description"));
    EXPECT_GE(item["start_frame"].get<int>(), 0);
    EXPECT_LT(item["end_frame"].get<int>(), 10);
  }
  ASSERT_EQ(s.visual_refs.size(), 10U);
  for (int j = 0; j < 10; ++j) EXPECT_EQ(*s.visual_refs[j].marker, j);
  EXPECT_EQ(s.prompt.rfind("<image><frame_id: 0><image><frame_id: 1>", 0), 0U);
  EXPECT_NE(s.prompt.find("Segment the execution of the task \"stack the cups\""), std::string::npos);
  EXPECT_FALSE(s.progress_value.has_value());
}

TEST(Segmentation, TaskFreeOmitsInstruction) {
  const auto ep = make_episode(60, {{0, 29}, {30, 59}});
  const auto s = gen_action_segmentation(ep, false, rate(2));
  EXPECT_EQ(s.prompt.find("stack the cups"), std::string::npos);
  EXPECT_NE(s.prompt.find("Segment the actions shown in the image sequence"), std::string::npos);
  EXPECT_EQ(s.family, VqaFamily::SegTaskFree);
}

TEST(Segmentation, NoValidSpan) {
  auto ep = make_episode(20, {{0, 19}});
  ep.segmentation.subtasks[0].complete_frame.reset();
  EXPECT_EQ(code_of([&] { gen_action_segmentation(ep, true, rate(2)); }), ErrorCode::NoValidSubtasks);
}

TEST(NextStep, Examples) {
  const auto ep = make_episode(90, {{0, 29}, {30, 59}, {60, 89}});
  EXPECT_EQ(gen_next_step(ep, 10, rate(2)).target, "Place the cup");
  EXPECT_EQ(gen_next_step(ep, 29, rate(2)).target, "Place the cup");  // boundary frame belongs to the finished step
  EXPECT_EQ(code_of([&] { gen_next_step(ep, 70, rate(2)); }), ErrorCode::NoFutureAction);
  const auto s = gen_next_step(ep, 40, rate(2));
  EXPECT_EQ(s.visual_refs.back().frame_id, 40);
  EXPECT_EQ(s.prompt.rfind("<image><image><image>\n", 0), 0U);
}

TEST(FuturePlan, SuffixOfPlan) {
  const auto ep = make_episode(90, {{5, 29}, {30, 59}, {60, 89}});
  EXPECT_EQ(gen_future_plan(ep, 0, rate(2)).target, "Grasp the cup\nPlace the cup\nPush the tray");
  EXPECT_EQ(gen_future_plan(ep, 45, rate(2)).target, "Push the tray");
  EXPECT_EQ(code_of([&] { gen_future_plan(ep, 89, rate(2)); }), ErrorCode::NoFutureAction);
  for (int t = 0; t < 60; ++t) {
    const auto plan = gen_future_plan(ep, t, rate(2)).target;
    EXPECT_EQ(plan.substr(0, plan.find('\n')), gen_next_step(ep, t, rate(2)).target);
  }
}

TEST(Progress, TargetsAndTag) {
  std::vector<double> diffs(99);
  std::mt19937_64 rng(3);
  for (auto& d : diffs) d = std::uniform_real_distribution<double>(0.1, 1)(rng);
  const auto ep = make_episode(100, {{0, 24}, {25, 99}}, true, diffs);
  const auto last = gen_progress(ep, 99, rate(2));
  EXPECT_NE(last.target.find("<progress> 100.00 %</progress>"), std::string::npos);
  EXPECT_NE(last.target.find("Remaining actions: none"), std::string::npos);
  const auto first = gen_progress(ep, 0, rate(2));
  EXPECT_NE(first.target.find("<progress> 0.00 %</progress>"), std::string::npos);
  EXPECT_NE(first.target.find("1. Grasp the cup\n2. Place the cup"), std::string::npos);
  const auto mid = gen_progress(ep, 24, rate(2));
  EXPECT_NE(mid.target.find("<progress> 37.50 %</progress>"), std::string::npos);
  EXPECT_DOUBLE_EQ(*mid.progress_value, *ep.records[24].progress);
  EXPECT_NE(mid.prompt.find("output it as a float wrapped by <progress> tags"), std::string::npos);
}

TEST(Progress, MissingLabels) {
  const auto ep = make_episode(30, {{0, 29}}, false);
  EXPECT_EQ(code_of([&] { gen_progress(ep, 3, rate(2)); }), ErrorCode::MissingLabels);
}

TEST(Progress, RenderParseRoundTrip) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 2000; ++i) {
    const double v = std::uniform_real_distribution<double>(0, 1)(rng);
    EXPECT_NEAR(parse_progress_tag(render_progress_tag(v)).value, v, 5e-5);
  }
}

TEST(ParseTag, Examples) {
  EXPECT_DOUBLE_EQ(parse_progress_tag("so far <progress> 37.5 %</progress>").value, 0.375);
  EXPECT_DOUBLE_EQ(parse_progress_tag("<progress>10</progress> then <progress> 80 %</progress>").value, 0.80);
  const auto c = parse_progress_tag("<progress>120%</progress>");
  EXPECT_DOUBLE_EQ(c.value, 1.0);
  EXPECT_TRUE(c.clamped);
  EXPECT_FALSE(parse_progress_tag("<progress>55</progress>").clamped);
  EXPECT_EQ(code_of([] { parse_progress_tag("no tag"); }), ErrorCode::TagNotFound);
}

TEST(Density, Frames) {
  EXPECT_EQ(density_frames(100, 5), (std::vector<int>{0, 24, 49, 74, 99}));
  EXPECT_EQ(density_frames(3, 8), (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(density_frames(10, 1), std::vector<int>{0});
}

TEST(Records, SegmentationRebuiltFromRecords) {
  const auto ep = make_episode(50, {{3, 20}, {25, 49}});
  const auto seg = segmentation_from_records(ep.records);
  EXPECT_EQ(seg.valid_segments(), ep.segmentation.valid_segments());
  const auto grouped = group_episodes(ep.records);
  ASSERT_EQ(grouped.size(), 1U);
  EXPECT_EQ(grouped[0].episode.num_frames, 50);

  auto broken = ep.records;
  broken.erase(broken.begin() + 10);
  EXPECT_EQ(code_of([&] { segmentation_from_records(broken); }), ErrorCode::SchemaViolation);
}

TEST(Records, UnfinishedSubtaskKeptWithoutBoundaries) {
  auto ep = make_episode(40, {{0, 19}});
  for (auto& r : ep.records) {
    if (r.frame_id >= 20) r.remaining_subtasks = {"Place the cup"};
  }
  ep.records.back().completion = CompletionState::GivenUp;
  const auto seg = segmentation_from_records(ep.records);
  ASSERT_EQ(seg.subtasks.size(), 2U);
  EXPECT_TRUE(seg.subtasks[1].is_absent());
  EXPECT_FALSE(seg.all_completed());
}

TEST(Sample, JsonKeys) {
  const auto ep = make_episode(60, {{0, 59}});
  auto cfg = rate(2);
  cfg.image_root = "/data";
  const auto j = gen_progress(ep, 30, cfg).to_json();
  for (const char* key : {"family", "instruction", "prompt", "images", "target", "progress"}) EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["family"], "progress");
  EXPECT_EQ(j["images"].back(), "/data/ds/ep/cam/frame_000030.png");
  EXPECT_TRUE(gen_next_step(make_episode(60, {{0, 29}, {30, 59}}), 5, cfg).to_json()["progress"].is_null());
}

TEST(Config, Validation) {
  SamplingConfig c;
  c.fps = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.window = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.window = 600;
  EXPECT_THROW(c.validate(), Error);
}
