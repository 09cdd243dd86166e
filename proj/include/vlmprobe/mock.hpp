#pragma once

#include <climits>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "vlmprobe/client.hpp"
#include "vlmprobe/corpus.hpp"
#include "vlmprobe/protocol.hpp"

namespace vlmprobe {

/// predicted = max(0, gt + offset + (gt > step_above ? step_delta : 0))
struct BiasModel {
  int offset = 0;
  int step_above = INT_MAX;
  int step_delta = 0;

  int bias(int ground_truth) const noexcept {
    return offset + (ground_truth > step_above ? step_delta : 0);
  }
  int predict(int ground_truth) const noexcept;
  friend bool operator==(const BiasModel&, const BiasModel&) = default;
};

enum class AttentionPattern { random, uniform };

struct MockConfig {
  std::string name = "zero-bias";
  BiasModel bias;
  AttentionPattern pattern = AttentionPattern::random;
  int num_layers = 4;
  int num_heads = 8;
  int vision_patch_px = 28;     // one vision token per patch_px x patch_px tile
  int special_prompt_tokens = 6;
  double vision_logit_bias = -1.5;
  double generated_logit_bias = 0.5;
  double logit_noise = 2.0;
  std::size_t inline_limit_bytes = kInlinePayloadLimit;
  /// Directory for sidecar payloads; without it every payload is inlined.
  std::optional<std::filesystem::path> dump_dir;
};

void to_json(nlohmann::json& j, const MockConfig& config);
void from_json(const nlohmann::json& j, MockConfig& config);

/// zero-bias, uniform, underestimate, overestimate, under-above-10.
std::vector<std::string> mock_preset_names();
/// Throws UnknownPreset.
MockConfig mock_preset(std::string_view name);

/// Ground truth keyed by SHA-256 of the image bytes.
class GroundTruthIndex {
 public:
  void add(const CorpusManifest& manifest);
  void add(std::string image_sha256, int ground_truth);
  std::optional<int> find(const std::string& image_sha256) const;
  std::size_t size() const noexcept { return by_hash_.size(); }

 private:
  std::map<std::string, int> by_hash_;
};

std::string render_curly_answer(int count);
/// Fenced JSON with `count` detections. `with_declared_count` wraps them in an
/// object that also states the count. Coordinates come from `key`.
std::string render_detection_answer(int count, bool with_declared_count, std::uint64_t key);

/// Whitespace-delimited pieces with the leading space kept, plus an end token.
std::vector<std::string> mock_tokenize(const std::string& text);

/// Deterministic stand-in for a VLM. Throws UnknownImage when the image hash
/// is not in the index.
ExamineResponse mock_respond(const ExamineRequest& request, const MockConfig& config, const GroundTruthIndex& index);

/// Request/response handling shared by the in-process transport and the HTTP
/// server: decodes the body, answers, and chooses inline vs sidecar payload.
class MockBackend {
 public:
  MockBackend(MockConfig config, GroundTruthIndex index);

  TransportReply handle(const std::string& body) const;
  const MockConfig& config() const noexcept { return config_; }

 private:
  MockConfig config_;
  GroundTruthIndex index_;
};

/// Transport that calls a MockBackend directly, without sockets.
class MockTransport final : public Transport {
 public:
  explicit MockTransport(const MockBackend& backend) : backend_(backend) {}
  TransportReply post(std::string_view path, const std::string& body) override;
  std::string describe() const override { return "mock:" + backend_.config().name; }

 private:
  const MockBackend& backend_;
};

/// HTTP front end for a MockBackend serving POST /v1/examine.
class MockServer {
 public:
  explicit MockServer(const MockBackend& backend);
  ~MockServer();
  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  /// Binds host:port (port 0 picks a free port) and returns the bound port,
  /// or -1 on failure.
  int bind(const std::string& host, int port);
  /// Blocks until stop() is called.
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace vlmprobe
