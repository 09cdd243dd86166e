#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vlmprobe/attention_dump.hpp"
#include "vlmprobe/util.hpp"
#include "vlmprobe/vocabulary.hpp"

namespace vlmprobe {

inline constexpr std::string_view kExaminePath = "/v1/examine";
/// Attention payloads at or above this size travel as sidecar files.
inline constexpr std::size_t kInlinePayloadLimit = 8u << 20;

struct GenerationParams {
  int max_new_tokens = 512;
  double temperature = 0.0;
  std::uint64_t seed = 0;
  friend bool operator==(const GenerationParams&, const GenerationParams&) = default;
};

struct ExamineRequest {
  Bytes image;
  std::string image_format = "png";
  std::string prompt;
  GenerationParams generation;
  AttentionMode attention_mode = AttentionMode::head_averaged;
  /// Hint for backends that render answers themselves (the mock); real
  /// models ignore it.
  std::optional<AnswerFormat> answer_format;
  /// Names the sidecar file when the payload is too large to inline.
  std::string trial_id;

  void validate() const;
};

std::string encode_request(const ExamineRequest& request);
/// Throws SchemaError.
ExamineRequest decode_request(std::string_view body);

struct BackendInfo {
  std::string model_id;
  int num_layers = 0;
  int num_heads = 0;  // heads of the model, even when the payload is head-averaged
  std::string token_layout;
  friend bool operator==(const BackendInfo&, const BackendInfo&) = default;
};

enum class PayloadTransport { absent, inline_payload, sidecar };

std::string_view to_string(PayloadTransport transport) noexcept;

struct ExamineResponse {
  std::string generated_text;
  std::vector<std::string> generated_tokens;
  RegionBoundaries boundaries;
  BackendInfo backend;
  PayloadTransport transport = PayloadTransport::absent;
  std::string sidecar_path;  // as sent by the backend, when transport == sidecar
  std::optional<AttentionDump> attention;

  /// Schema rules plus the dimension check of the payload against boundaries.
  void validate() const;
};

/// Serializes a response. The payload is inlined as base64 unless
/// `sidecar_path` is non-empty, in which case only the path is written and the
/// caller is responsible for having written the file.
std::string encode_response(const ExamineResponse& response, std::string_view sidecar_path = {});

/// Parses and validates a response body, loading sidecar payloads relative to
/// dump_root. Throws SchemaError or DimensionMismatch.
ExamineResponse decode_response(std::string_view body, const std::filesystem::path& dump_root);

std::string encode_error(std::string_view kind, std::string_view message);

}  // namespace vlmprobe
