#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "progkit/backend.hpp"
#include "progkit/prompts.hpp"

namespace progkit {

struct RemoteConfig {
  /// Base URL ("http://host:8000") or full URL including the request path.
  std::string endpoint;
  std::string model;
  std::string token;
  std::chrono::milliseconds timeout{60'000};
  RetryPolicy retry{3, std::chrono::milliseconds(500)};
  int max_in_flight = 8;

  /// Reads ANNOTATOR_ENDPOINT, ANNOTATOR_MODEL and ANNOTATOR_TOKEN. A missing
  /// token is an AuthError; a missing endpoint or model is a ConfigError.
  static RemoteConfig from_env();
};

struct ImagePart {
  int frame_index = 0;
  std::string mime = "image/png";
  std::string base64;
};

std::string base64_encode(std::span<const std::uint8_t> bytes);

/// Chat-completions request body: one user message whose content is the
/// prompt text followed by each image (as a data URL) and its
/// `<frame_id: N>` marker; temperature 0.
nlohmann::json build_chat_request(const std::string& model, const std::string& prompt,
                                  std::span<const ImagePart> images);

/// First choice's message content; string or array-of-text-parts forms.
std::string extract_chat_content(const std::string& response_body);

/// HTTP annotator speaking the chat-completions wire format. Requests are
/// limited to `max_in_flight` concurrent calls; 429, 5xx and transport
/// failures back off exponentially up to `retry.max_attempts`, after which
/// BackendUnavailable is raised. 401/403 raise AuthError immediately.
class RemoteAnnotator : public AnnotatorBackend {
 public:
  explicit RemoteAnnotator(RemoteConfig config);
  ~RemoteAnnotator() override;

  std::string plan(const PlanRequest& request) override;
  std::string segment(const SegmentRequest& request) override;
  std::string reason(const ReasonRequest& request) override;

  std::string complete(const std::string& prompt, std::span<const FrameInput> frames);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::unique_ptr<AnnotatorBackend> remote_annotator(const RemoteConfig& config);

}  // namespace progkit
