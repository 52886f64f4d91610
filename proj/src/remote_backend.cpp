#include "progkit/remote_backend.hpp"

#include <httplib.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <semaphore>
#include <thread>

#include "progkit/error.hpp"

namespace progkit {

using nlohmann::json;

RemoteConfig RemoteConfig::from_env() {
  auto env = [](const char* name) -> std::string {
    const char* v = std::getenv(name);
    return v != nullptr ? std::string(v) : std::string();
  };
  RemoteConfig config;
  config.endpoint = env("ANNOTATOR_ENDPOINT");
  config.model = env("ANNOTATOR_MODEL");
  config.token = env("ANNOTATOR_TOKEN");
  if (config.token.empty()) throw Error(ErrorCode::AuthError, "ANNOTATOR_TOKEN is not set");
  if (config.endpoint.empty()) throw Error(ErrorCode::ConfigError, "ANNOTATOR_ENDPOINT is not set");
  if (config.model.empty()) throw Error(ErrorCode::ConfigError, "ANNOTATOR_MODEL is not set");
  return config;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(kAlphabet[(v >> 6) & 63]);
    out.push_back(kAlphabet[v & 63]);
  }
  if (i + 1 == bytes.size()) {
    const std::uint32_t v = bytes[i] << 16;
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out += "==";
  } else if (i + 2 == bytes.size()) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(kAlphabet[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

json build_chat_request(const std::string& model, const std::string& prompt, std::span<const ImagePart> images) {
  json content = json::array();
  content.push_back({{"type", "text"}, {"text", prompt}});
  for (const auto& image : images) {
    content.push_back(
        {{"type", "image_url"}, {"image_url", {{"url", "data:" + image.mime + ";base64," + image.base64}}}});
    content.push_back({{"type", "text"}, {"text", "<frame_id: " + std::to_string(image.frame_index) + ">"}});
  }
  return {{"model", model},
          {"messages", json::array({{{"role", "user"}, {"content", std::move(content)}}})},
          {"temperature", 0}};
}

std::string extract_chat_content(const std::string& response_body) {
  json j;
  try {
    j = json::parse(response_body);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, std::string("chat response is not JSON: ") + e.what());
  }
  if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
    throw Error(ErrorCode::ParseError, "chat response has no choices");
  }
  const auto& message = j["choices"][0].value("message", json::object());
  const auto content = message.value("content", json(nullptr));
  if (content.is_string()) return content.get<std::string>();
  if (content.is_array()) {
    std::string text;
    for (const auto& part : content) {
      if (part.value("type", "") == "text") text += part.value("text", "");
    }
    return text;
  }
  throw Error(ErrorCode::ParseError, "chat response message has no content");
}

namespace {

struct Endpoint {
  std::string scheme_host_port;
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::ConfigError, "endpoint must include a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/v1/chat/completions"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

struct RemoteAnnotator::Impl {
  RemoteConfig config;
  Endpoint endpoint;
  std::counting_semaphore<1024> in_flight;

  explicit Impl(RemoteConfig c)
      : config(std::move(c)), endpoint(split_endpoint(config.endpoint)), in_flight(std::clamp(config.max_in_flight, 1, 1024)) {}
};

RemoteAnnotator::RemoteAnnotator(RemoteConfig config) {
  if (config.token.empty()) throw Error(ErrorCode::AuthError, "remote annotator requires an auth token");
  if (config.model.empty()) throw Error(ErrorCode::ConfigError, "remote annotator requires a model name");
  impl_ = std::make_unique<Impl>(std::move(config));
}

RemoteAnnotator::~RemoteAnnotator() = default;

std::string RemoteAnnotator::complete(const std::string& prompt, std::span<const FrameInput> frames) {
  std::vector<ImagePart> images;
  for (const auto& f : frames) {
    if (f.image.empty()) continue;
    std::ifstream in(f.image, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot read frame " + f.image.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    images.push_back({f.index, "image/png", base64_encode(bytes)});
  }
  const std::string body = build_chat_request(impl_->config.model, prompt, images).dump();
  const auto& cfg = impl_->config;

  struct Permit {
    std::counting_semaphore<1024>& sem;
    explicit Permit(std::counting_semaphore<1024>& s) : sem(s) { sem.acquire(); }
    ~Permit() { sem.release(); }
  } permit(impl_->in_flight);

  const int attempts = std::max(1, cfg.retry.max_attempts);
  std::string last_failure;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    httplib::Client client(impl_->endpoint.scheme_host_port);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    client.set_bearer_token_auth(cfg.token);

    auto result = client.Post(impl_->endpoint.path, body, "application/json");
    if (!result) {
      last_failure = "transport error: " + httplib::to_string(result.error());
    } else if (result->status == 401 || result->status == 403) {
      throw Error(ErrorCode::AuthError, "annotator endpoint rejected credentials (HTTP " +
                                            std::to_string(result->status) + ")");
    } else if (result->status == 200) {
      return extract_chat_content(result->body);
    } else if (result->status == 429 || result->status >= 500) {
      last_failure = "HTTP " + std::to_string(result->status);
    } else {
      throw Error(ErrorCode::BackendUnavailable,
                  "annotator endpoint returned HTTP " + std::to_string(result->status) + ": " + result->body);
    }
    if (attempt < attempts) std::this_thread::sleep_for(cfg.retry.backoff_base * (1 << (attempt - 1)));
  }
  throw Error(ErrorCode::BackendUnavailable,
              "annotator endpoint failed after " + std::to_string(attempts) + " attempts (" + last_failure + ")");
}

std::string RemoteAnnotator::plan(const PlanRequest& request) { return complete(request.prompt, request.frames); }

std::string RemoteAnnotator::segment(const SegmentRequest& request) {
  return complete(request.prompt, request.frames);
}

std::string RemoteAnnotator::reason(const ReasonRequest& request) {
  return complete(request.prompt, std::span<const FrameInput>(&request.frame, 1));
}

std::unique_ptr<AnnotatorBackend> remote_annotator(const RemoteConfig& config) {
  return std::make_unique<RemoteAnnotator>(config);
}

}  // namespace progkit
