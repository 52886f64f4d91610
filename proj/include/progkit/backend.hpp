#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "progkit/annotation.hpp"

namespace progkit {

/// A frame handed to an annotator: its index in the trajectory and, for
/// image episodes, the path of the extracted frame. Feature-only episodes
/// leave `image` empty.
struct FrameInput {
  int index = 0;
  std::filesystem::path image;
};

/// Per-episode context shared by all requests for one episode. `metadata`
/// is the parsed meta.json (instruction, num_frames, optional scene script).
struct EpisodeContext {
  EpisodeRef episode;
  nlohmann::json metadata = nlohmann::json::object();
};

struct PlanRequest {
  const EpisodeContext* context = nullptr;
  std::string prompt;
  std::vector<FrameInput> frames;
};

struct SegmentRequest {
  const EpisodeContext* context = nullptr;
  std::vector<std::string> plan;
  std::string prompt;
  std::vector<FrameInput> frames;
};

struct ReasonRequest {
  const EpisodeContext* context = nullptr;
  FrameInput frame;
  CompletionState state = CompletionState::Unfinished;
  std::vector<std::string> remaining;
  std::string prompt;
};

/// A VLM annotator. Implementations keep no per-request state and may be
/// called concurrently from several pipeline workers.
class AnnotatorBackend {
 public:
  virtual ~AnnotatorBackend() = default;

  virtual std::string plan(const PlanRequest& request) = 0;
  virtual std::string segment(const SegmentRequest& request) = 0;
  virtual std::string reason(const ReasonRequest& request) = 0;
};

/// Deterministic offline annotator driven by the scene script stored under
/// the `script` key of an episode's metadata:
///
///   { "plan": [...], "segments": [{id, name, start_frame, complete_frame, notes}],
///     "overall_notes": "...", "faults": {"plan"|"segment"|"reason": "<raw text>"},
///     "unavailable": bool }
///
/// `faults` replaces the response of a stage verbatim (fault injection);
/// `unavailable` makes every call throw BackendUnavailable. Phrasing
/// variants are chosen from a hash of (seed, trajectory id, frame).
class MockBackend : public AnnotatorBackend {
 public:
  explicit MockBackend(std::uint64_t seed = 0) : seed_(seed) {}

  std::string plan(const PlanRequest& request) override;
  std::string segment(const SegmentRequest& request) override;
  std::string reason(const ReasonRequest& request) override;

 private:
  std::uint64_t seed_;
};

/// FNV-1a, stable across platforms (std::hash is not).
std::uint64_t stable_hash(std::string_view text, std::uint64_t seed = 0);

}  // namespace progkit
