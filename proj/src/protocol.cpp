#include "vlmprobe/protocol.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "vlmprobe/errors.hpp"

namespace vlmprobe {

using nlohmann::json;

std::string_view to_string(PayloadTransport transport) noexcept {
  switch (transport) {
    case PayloadTransport::absent: return "absent";
    case PayloadTransport::inline_payload: return "inline";
    case PayloadTransport::sidecar: return "sidecar";
  }
  return "?";
}

void ExamineRequest::validate() const {
  if (image.empty()) throw SchemaError("request carries no image");
  if (prompt.empty()) throw SchemaError("request carries no prompt");
  if (generation.max_new_tokens < 1) throw SchemaError("max_new_tokens must be >= 1");
  if (generation.temperature < 0.0) throw SchemaError("temperature must be >= 0");
}

std::string encode_request(const ExamineRequest& r) {
  json j{{"image", {{"format", r.image_format}, {"data_base64", base64_encode(r.image)}}},
         {"prompt", r.prompt},
         {"generation",
          {{"max_new_tokens", r.generation.max_new_tokens},
           {"temperature", r.generation.temperature},
           {"seed", r.generation.seed}}},
         {"attention_mode", to_string(r.attention_mode)}};
  if (r.answer_format) j["answer_format"] = to_string(*r.answer_format);
  if (!r.trial_id.empty()) j["trial_id"] = r.trial_id;
  return j.dump();
}

ExamineRequest decode_request(std::string_view body) {
  const json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw SchemaError("request body is not a JSON object");
  ExamineRequest r;
  try {
    r.image_format = j.at("image").at("format").get<std::string>();
    r.image = base64_decode(j.at("image").at("data_base64").get<std::string>());
    r.prompt = j.at("prompt").get<std::string>();
    const auto& gen = j.at("generation");
    r.generation.max_new_tokens = gen.at("max_new_tokens").get<int>();
    r.generation.temperature = gen.value("temperature", 0.0);
    r.generation.seed = gen.value("seed", std::uint64_t{0});
    const auto mode = parse_attention_mode(j.value("attention_mode", "head_averaged"));
    if (!mode) throw SchemaError("unknown attention_mode");
    r.attention_mode = *mode;
    if (j.contains("answer_format")) {
      r.answer_format = parse_answer_format(j.at("answer_format").get<std::string>());
      if (!r.answer_format) throw SchemaError("unknown answer_format");
    }
    r.trial_id = j.value("trial_id", "");
  } catch (const json::exception& e) {
    throw SchemaError(fmt::format("request: {}", e.what()));
  }
  r.validate();
  return r;
}

void ExamineResponse::validate() const {
  boundaries.validate();
  if (generated_tokens.size() != static_cast<std::size_t>(boundaries.generated)) {
    throw SchemaError(fmt::format("G = {} but {} generated token strings", boundaries.generated,
                                  generated_tokens.size()));
  }
  if (transport != PayloadTransport::absent && !attention) throw SchemaError("payload declared but not loaded");
  if (attention) attention->validate_against(boundaries);
}

std::string encode_response(const ExamineResponse& r, std::string_view sidecar_path) {
  json attention = nullptr;
  if (r.attention) {
    if (sidecar_path.empty()) {
      attention = {{"transport", "inline"}, {"data_base64", base64_encode(encode_dump(*r.attention))}};
    } else {
      attention = {{"transport", "sidecar"}, {"path", sidecar_path}};
    }
  }
  const json j{{"generated_text", r.generated_text},
               {"generated_tokens", r.generated_tokens},
               {"boundaries",
                {{"n_vision", r.boundaries.n_vision},
                 {"n_prompt", r.boundaries.n_prompt},
                 {"S", r.boundaries.input_len},
                 {"G", r.boundaries.generated}}},
               {"attention", attention},
               {"backend_info",
                {{"model_id", r.backend.model_id},
                 {"num_layers", r.backend.num_layers},
                 {"num_heads", r.backend.num_heads},
                 {"token_layout", r.backend.token_layout}}}};
  return j.dump();
}

ExamineResponse decode_response(std::string_view body, const std::filesystem::path& dump_root) {
  const json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw SchemaError("response body is not a JSON object");
  ExamineResponse r;
  try {
    r.generated_text = j.at("generated_text").get<std::string>();
    r.generated_tokens = j.at("generated_tokens").get<std::vector<std::string>>();
    const auto& b = j.at("boundaries");
    r.boundaries = {b.at("n_vision").get<int>(), b.at("n_prompt").get<int>(), b.at("S").get<int>(),
                    b.at("G").get<int>()};
    const auto& info = j.at("backend_info");
    r.backend.model_id = info.at("model_id").get<std::string>();
    r.backend.num_layers = info.at("num_layers").get<int>();
    r.backend.num_heads = info.at("num_heads").get<int>();
    r.backend.token_layout = info.value("token_layout", "");

    const auto& attention = j.at("attention");
    if (!attention.is_null()) {
      const auto transport = attention.at("transport").get<std::string>();
      if (transport == "inline") {
        r.transport = PayloadTransport::inline_payload;
        r.attention = decode_dump(base64_decode(attention.at("data_base64").get<std::string>()));
      } else if (transport == "sidecar") {
        r.transport = PayloadTransport::sidecar;
        r.sidecar_path = attention.at("path").get<std::string>();
        std::filesystem::path p(r.sidecar_path);
        if (p.is_relative()) p = dump_root / p;
        try {
          r.attention = read_dump(p);
        } catch (const IoError& e) {
          throw SchemaError(fmt::format("sidecar payload: {}", e.what()));
        }
      } else {
        throw SchemaError(fmt::format("unknown attention transport '{}'", transport));
      }
    }
  } catch (const json::exception& e) {
    throw SchemaError(fmt::format("response: {}", e.what()));
  }
  r.validate();
  return r;
}

std::string encode_error(std::string_view kind, std::string_view message) {
  return json{{"error", {{"kind", kind}, {"message", message}}}}.dump();
}

}  // namespace vlmprobe
