#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "progkit/bounded_queue.hpp"
#include "progkit/error.hpp"
#include "progkit/jsonl.hpp"
#include "progkit/pipeline.hpp"
#include "progkit/synth.hpp"

using namespace progkit;
namespace fs = std::filesystem;

namespace {

SynthConfig small_corpus(int episodes, std::uint64_t seed = 1) {
  SynthConfig c;
  c.episodes = episodes;
  c.seed = seed;
  c.min_frames = 30;
  c.max_frames = 60;
  return c;
}

PipelineConfig fast_config() {
  PipelineConfig c;
  c.retry = {2, std::chrono::milliseconds(1)};
  return c;
}

std::string dump(const std::vector<AnnotationRecord>& recs) {
  std::ostringstream out;
  write_jsonl(out, recs);
  return out.str();
}

std::multiset<std::string> delivered(const PipelineOutput& out) {
  std::multiset<std::string> ids;
  std::string last;
  for (const auto& r : out.records) {
    if (r.frame_id == 0) ids.insert(r.episode.trajectory_id());
  }
  for (const auto& q : out.quarantine) ids.insert(q.episode.trajectory_id());
  return ids;
}

std::multiset<std::string> source_ids(const std::vector<EpisodeSpec>& specs) {
  std::multiset<std::string> ids;
  for (const auto& s : specs) ids.insert(s.ref.trajectory_id());
  return ids;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("progkit_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Queue, FifoAndClose) {
  BoundedQueue<int> q(2);
  q.push(1);
  q.push(2);
  std::thread producer([&] {
    q.push(3);  // blocks until a pop
    q.close();
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  EXPECT_EQ(*q.pop(), 1);
  EXPECT_EQ(*q.pop(), 2);
  EXPECT_EQ(*q.pop(), 3);
  EXPECT_FALSE(q.pop().has_value());
  producer.join();
  EXPECT_GE(q.blocked_pushes(), 1U);
}

TEST(Config, Validation) {
  PipelineConfig c;
  c.preprocessor_workers = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.dedup_threshold = 1.5;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.queue_capacity = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Pipeline, TenEpisodesDeterministic) {
  const auto specs = synth_specs(small_corpus(10));
  MockBackend backend(7);
  VectorSource a(specs), b(specs);
  const auto out1 = run_pipeline(a, backend, fast_config());
  const auto out2 = run_pipeline(b, backend, fast_config());
  EXPECT_EQ(out1.report.episodes_out, 10U);
  EXPECT_EQ(out1.report.quarantined, 0U);
  EXPECT_EQ(dump(out1.records), dump(out2.records));
  EXPECT_EQ(out1.report.to_json(false).dump(), out2.report.to_json(false).dump());
  EXPECT_EQ(delivered(out1), source_ids(specs));
}

TEST(Pipeline, OutputSortedAndDense) {
  const auto specs = synth_specs(small_corpus(6));
  MockBackend backend(1);
  VectorSource src(specs);
  const auto out = run_pipeline(src, backend, fast_config());
  std::size_t frames = 0;
  for (const auto& s : specs) frames += static_cast<std::size_t>(s.features->num_frames);
  EXPECT_EQ(out.records.size(), frames);
  for (std::size_t i = 1; i < out.records.size(); ++i) {
    const auto& x = out.records[i - 1].episode;
    const auto& y = out.records[i].episode;
    const auto kx = std::tie(x.dataset_name, x.episode_id, out.records[i - 1].frame_id, x.camera_key);
    const auto ky = std::tie(y.dataset_name, y.episode_id, out.records[i].frame_id, y.camera_key);
    EXPECT_LT(kx, ky);
  }
  for (const auto& r : out.records) {
    // copied reasoning always sits inside an annotated span; gap frames carry none
    if (!r.reasoning.empty()) EXPECT_TRUE(r.subtask_id.has_value());
    if (r.completion == CompletionState::Finished) EXPECT_TRUE(r.remaining_subtasks.empty());
  }
}

TEST(Pipeline, MalformedResponseQuarantinedWithRaw) {
  auto specs = synth_specs(small_corpus(10));
  specs[3].metadata["script"]["faults"] = {{"segment", "I cannot do that."}};
  MockBackend backend(0);
  VectorSource src(specs);
  const auto out = run_pipeline(src, backend, fast_config());
  EXPECT_EQ(out.report.episodes_out, 9U);
  ASSERT_EQ(out.quarantine.size(), 1U);
  EXPECT_EQ(out.quarantine[0].episode.trajectory_id(), specs[3].ref.trajectory_id());
  EXPECT_EQ(out.quarantine[0].stage, "annotate");
  EXPECT_EQ(out.quarantine[0].raw_response, "I cannot do that.");
  EXPECT_EQ(out.quarantine[0].error, "ParseError");
  EXPECT_EQ(delivered(out), source_ids(specs));
}

TEST(Pipeline, UnavailableBackendQuarantinedRunContinues) {
  auto specs = synth_specs(small_corpus(5));
  specs[1].metadata["script"]["unavailable"] = true;
  MockBackend backend(0);
  VectorSource src(specs);
  const auto out = run_pipeline(src, backend, fast_config());
  EXPECT_EQ(out.report.episodes_out, 4U);
  ASSERT_EQ(out.quarantine.size(), 1U);
  EXPECT_EQ(out.quarantine[0].error, "BackendUnavailable");
}

TEST(Pipeline, BackPressureWithCapacityOne) {
  const auto specs = synth_specs(small_corpus(12));
  auto cfg = fast_config();
  cfg.queue_capacity = 1;
  cfg.simulated.consume = std::chrono::microseconds(5000);
  MockBackend backend(0);
  VectorSource src(specs);
  const auto out = run_pipeline(src, backend, cfg);
  EXPECT_GT(out.report.reader_blocked_pushes, 0U);
  EXPECT_EQ(out.report.episodes_out + out.report.quarantined, out.report.episodes_in);
  EXPECT_EQ(delivered(out), source_ids(specs));
}

TEST(Pipeline, ReportTimingSection) {
  const auto specs = synth_specs(small_corpus(3));
  MockBackend backend(0);
  VectorSource src(specs);
  const auto out = run_pipeline(src, backend, fast_config());
  const auto with = out.report.to_json(true);
  const auto without = out.report.to_json(false);
  EXPECT_TRUE(with.contains("timing"));
  EXPECT_FALSE(without.contains("timing"));
  EXPECT_EQ(without["episodes_in"], 3);
}

TEST(DirectorySourceTest, FeatureCorpusAndMetaErrors) {
  const auto root = temp_dir("dirsource");
  auto cfg = small_corpus(4);
  cfg.cameras = {"front", "wrist"};
  write_synth_corpus(root, cfg);
  DirectorySource src(root);
  EXPECT_EQ(src.size(), 8U);
  MockBackend backend(0);
  auto out = run_pipeline(src, backend, fast_config());
  EXPECT_EQ(out.report.episodes_out, 8U);

  // a meta.json that disagrees with the features is quarantined at read
  const auto meta_path = root / "synth" / "ep_00001" / "meta.json";
  auto meta = nlohmann::json::parse(std::ifstream(meta_path));
  meta["num_frames"] = meta["num_frames"].get<int>() + 5;
  std::ofstream(meta_path) << meta.dump();
  DirectorySource src2(root);
  out = run_pipeline(src2, backend, fast_config());
  EXPECT_EQ(out.report.episodes_out, 6U);
  ASSERT_EQ(out.quarantine.size(), 2U);
  EXPECT_EQ(out.quarantine[0].stage, "read");
  EXPECT_EQ(out.quarantine[0].error, "LengthMismatch");
}

TEST(DirectorySourceTest, PngCorpus) {
  const auto root = temp_dir("pngsource");
  auto cfg = small_corpus(2);
  cfg.write_png = true;
  cfg.png_size = 16;
  write_synth_corpus(root, cfg);
  const auto images = list_frame_images(root / "synth" / "ep_00000" / "front");
  EXPECT_FALSE(images.empty());
  EXPECT_EQ(images.front().filename(), "frame_000000.png");
  DirectorySource src(root);
  MockBackend backend(0);
  const auto out = run_pipeline(src, backend, fast_config());
  EXPECT_EQ(out.report.episodes_out, 2U);
}

TEST(DirectorySourceTest, MissingRoot) {
  EXPECT_THROW(DirectorySource(fs::temp_directory_path() / "progkit_does_not_exist"), Error);
}

TEST(Quarantine, JsonlFile) {
  const auto dir = temp_dir("quarantine");
  QuarantineEntry q;
  q.episode = {"ds", "e", "c", 3, "i"};
  q.stage = "annotate";
  q.error = "ParseError";
  q.message = "bad";
  q.raw_response = "raw text";
  write_quarantine_jsonl(dir / "q.jsonl", {q});
  const auto rows = read_json_lines(dir / "q.jsonl");
  ASSERT_EQ(rows.size(), 1U);
  EXPECT_EQ(rows[0]["raw_response"], "raw text");
  EXPECT_EQ(rows[0]["trajectory_id"], "ds/e/c");
}
