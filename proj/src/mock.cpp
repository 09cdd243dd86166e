#include "vlmprobe/mock.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "vlmprobe/errors.hpp"
#include "vlmprobe/raster.hpp"

namespace vlmprobe {

using nlohmann::json;

int BiasModel::predict(int ground_truth) const noexcept { return std::max(0, ground_truth + bias(ground_truth)); }

// ---------------------------------------------------------------------------
// Config and presets

void to_json(json& j, const MockConfig& c) {
  j = json{{"name", c.name},
           {"bias", {{"offset", c.bias.offset}, {"step_delta", c.bias.step_delta}}},
           {"attention_pattern", c.pattern == AttentionPattern::uniform ? "uniform" : "random"},
           {"num_layers", c.num_layers},
           {"num_heads", c.num_heads},
           {"vision_patch_px", c.vision_patch_px},
           {"special_prompt_tokens", c.special_prompt_tokens},
           {"vision_logit_bias", c.vision_logit_bias},
           {"generated_logit_bias", c.generated_logit_bias},
           {"logit_noise", c.logit_noise},
           {"inline_limit_bytes", c.inline_limit_bytes}};
  if (c.bias.step_above != INT_MAX) j["bias"]["step_above"] = c.bias.step_above;
  if (c.dump_dir) j["dump_dir"] = c.dump_dir->string();
}

void from_json(const json& j, MockConfig& c) {
  try {
    c.name = j.value("name", c.name);
    if (j.contains("bias")) {
      const auto& b = j.at("bias");
      c.bias.offset = b.value("offset", 0);
      c.bias.step_above = b.value("step_above", INT_MAX);
      c.bias.step_delta = b.value("step_delta", 0);
    }
    const auto pattern = j.value("attention_pattern", std::string("random"));
    if (pattern != "random" && pattern != "uniform") {
      throw ConfigError(fmt::format("unknown attention_pattern '{}'", pattern));
    }
    c.pattern = pattern == "uniform" ? AttentionPattern::uniform : AttentionPattern::random;
    c.num_layers = j.value("num_layers", c.num_layers);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.vision_patch_px = j.value("vision_patch_px", c.vision_patch_px);
    c.special_prompt_tokens = j.value("special_prompt_tokens", c.special_prompt_tokens);
    c.vision_logit_bias = j.value("vision_logit_bias", c.vision_logit_bias);
    c.generated_logit_bias = j.value("generated_logit_bias", c.generated_logit_bias);
    c.logit_noise = j.value("logit_noise", c.logit_noise);
    c.inline_limit_bytes = j.value("inline_limit_bytes", c.inline_limit_bytes);
    if (j.contains("dump_dir")) c.dump_dir = j.at("dump_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("mock config: {}", e.what()));
  }
  if (c.num_layers < 1 || c.num_heads < 1 || c.vision_patch_px < 1 || c.special_prompt_tokens < 1) {
    throw ConfigError("mock config: layer, head, patch and special-token counts must be positive");
  }
}

std::vector<std::string> mock_preset_names() {
  return {"zero-bias", "uniform", "underestimate", "overestimate", "under-above-10"};
}

MockConfig mock_preset(std::string_view name) {
  MockConfig c;
  c.name = std::string(name);
  if (name == "zero-bias") return c;
  if (name == "uniform") {
    c.pattern = AttentionPattern::uniform;
    return c;
  }
  if (name == "underestimate") {
    c.bias.offset = -3;
    return c;
  }
  if (name == "overestimate") {
    c.bias.offset = 3;
    return c;
  }
  if (name == "under-above-10") {
    c.bias.step_above = 10;
    c.bias.step_delta = -2;
    return c;
  }
  std::string known;
  for (const auto& n : mock_preset_names()) known += " " + n;
  throw UnknownPreset(fmt::format("unknown mock preset '{}' (known:{})", name, known));
}

// ---------------------------------------------------------------------------
// Ground truth

void GroundTruthIndex::add(const CorpusManifest& manifest) {
  for (const auto& e : manifest.entries) add(sha256_hex(read_file(e.resolved_path)), e.ground_truth_count);
}

void GroundTruthIndex::add(std::string image_sha256, int ground_truth) {
  by_hash_[std::move(image_sha256)] = ground_truth;
}

std::optional<int> GroundTruthIndex::find(const std::string& image_sha256) const {
  const auto it = by_hash_.find(image_sha256);
  if (it == by_hash_.end()) return std::nullopt;
  return it->second;
}

// ---------------------------------------------------------------------------
// Answer rendering

std::string render_curly_answer(int count) { return fmt::format("After counting each one, I find {{{}}}.", count); }

std::string render_detection_answer(int count, bool with_declared_count, std::uint64_t key) {
  auto rng = CounterRng::keyed(key, 0x626f78ULL);
  std::vector<std::string> items;
  for (int i = 0; i < count; ++i) {
    const int x = static_cast<int>(rng.below(600)), y = static_cast<int>(rng.below(600));
    if (with_declared_count) {
      items.push_back(fmt::format(R"({{"x":{},"y":{}}})", x + 20, y + 20));
    } else {
      items.push_back(fmt::format(R"({{"bbox_2d":[{},{},{},{}],"label":"object"}})", x, y, x + 36, y + 36));
    }
  }
  std::string body;
  for (std::size_t i = 0; i < items.size(); ++i) body += (i ? ",\n  " : "\n  ") + items[i];
  if (with_declared_count) {
    return fmt::format("```json\n{{\"coordinates\": [{}\n], \"count\": {}}}\n```", body, count);
  }
  return fmt::format("```json\n[{}\n]\n```", body);
}

std::vector<std::string> mock_tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t j = i;
    while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    tokens.push_back(text.substr(i, j - i));
    i = j;
  }
  tokens.emplace_back("<|im_end|>");
  return tokens;
}

// ---------------------------------------------------------------------------
// Responding

namespace {

int count_words(const std::string& text) {
  std::istringstream in(text);
  int n = 0;
  for (std::string w; in >> w;) ++n;
  return n;
}

bool mentions_count_request(const std::string& prompt) {
  std::string lower(prompt);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  return lower.find("count the number of") != std::string::npos && lower.find("json") != std::string::npos;
}

void softmax_row(CounterRng& rng, const MockConfig& c, const RegionBoundaries& b, std::size_t len,
                 std::vector<double>& out) {
  out.resize(len);
  double max_logit = -1e300;
  for (std::size_t i = 0; i < len; ++i) {
    const double region = static_cast<int>(i) < b.n_vision   ? c.vision_logit_bias
                          : static_cast<int>(i) < b.input_len ? 0.0
                                                               : c.generated_logit_bias;
    out[i] = region + c.logit_noise * rng.unit();
    max_logit = std::max(max_logit, out[i]);
  }
  double total = 0.0;
  for (auto& v : out) total += (v = std::exp(v - max_logit));
  for (auto& v : out) v /= total;
}

AttentionDump synthesize_attention(const MockConfig& c, AttentionMode mode, const RegionBoundaries& b,
                                   std::uint64_t key) {
  AttentionDump dump;
  dump.mode = mode;
  dump.num_layers = c.num_layers;
  dump.num_heads = mode == AttentionMode::full ? c.num_heads : 1;
  dump.input_len = b.input_len;
  dump.generated = b.generated;
  dump.tokens.resize(static_cast<std::size_t>(b.generated));

  auto rng = CounterRng::keyed(key, 0x6174746eULL);
  std::vector<double> row, mean;
  for (int g = 1; g <= b.generated; ++g) {
    const auto len = dump.context_len(g);
    auto& block = dump.tokens[static_cast<std::size_t>(g - 1)];
    block.resize(dump.token_size(g));
    if (c.pattern == AttentionPattern::uniform) {
      std::fill(block.begin(), block.end(), static_cast<float>(1.0 / static_cast<double>(len)));
      continue;
    }
    for (int l = 0; l < c.num_layers; ++l) {
      mean.assign(len, 0.0);
      for (int h = 0; h < c.num_heads; ++h) {
        softmax_row(rng, c, b, len, row);
        if (mode == AttentionMode::full) {
          auto* dst = &block[(static_cast<std::size_t>(l) * c.num_heads + h) * len];
          for (std::size_t i = 0; i < len; ++i) dst[i] = static_cast<float>(row[i]);
        } else {
          for (std::size_t i = 0; i < len; ++i) mean[i] += row[i];
        }
      }
      if (mode == AttentionMode::head_averaged) {
        auto* dst = &block[static_cast<std::size_t>(l) * len];
        for (std::size_t i = 0; i < len; ++i) dst[i] = static_cast<float>(mean[i] / c.num_heads);
      }
    }
  }
  return dump;
}

}  // namespace

ExamineResponse mock_respond(const ExamineRequest& request, const MockConfig& c, const GroundTruthIndex& index) {
  const auto image_sha = sha256_hex(request.image);
  const auto gt = index.find(image_sha);
  if (!gt) throw UnknownImage(fmt::format("image {} is not in the mock's ground-truth index", image_sha.substr(0, 16)));

  const auto format = request.answer_format.value_or(
      request.prompt.find("curly brackets") != std::string::npos ? AnswerFormat::curly_count
                                                                 : AnswerFormat::json_detection);
  const auto key = key_from_hex(sha256_hex(fmt::format("{}|{}|{}|{}", image_sha, request.prompt,
                                                       request.generation.seed, c.name)));
  const int predicted = c.bias.predict(*gt);
  const auto text = format == AnswerFormat::curly_count
                        ? render_curly_answer(predicted)
                        : render_detection_answer(predicted, mentions_count_request(request.prompt), key);

  ExamineResponse r;
  r.generated_tokens = mock_tokenize(text);
  if (r.generated_tokens.size() > static_cast<std::size_t>(request.generation.max_new_tokens)) {
    r.generated_tokens.resize(static_cast<std::size_t>(request.generation.max_new_tokens));
  }
  for (const auto& t : r.generated_tokens) {
    if (t != "<|im_end|>") r.generated_text += t;
  }

  const auto size = probe_image_size(request.image);
  const int patch = c.vision_patch_px;
  r.boundaries.n_vision = size ? ((size->width + patch - 1) / patch) * ((size->height + patch - 1) / patch) : 256;
  r.boundaries.n_prompt = count_words(request.prompt) + c.special_prompt_tokens;
  r.boundaries.input_len = r.boundaries.n_vision + r.boundaries.n_prompt;
  r.boundaries.generated = static_cast<int>(r.generated_tokens.size());

  r.backend = {"mock:" + c.name, c.num_layers, c.num_heads,
               fmt::format("vision=[0,n_vision) one token per {}px tile; prompt=[n_vision,S) words + {} special tokens; "
                           "generated: whitespace pieces + <|im_end|>",
                           patch, c.special_prompt_tokens)};
  if (request.attention_mode != AttentionMode::none) {
    r.attention = synthesize_attention(c, request.attention_mode, r.boundaries, key);
    r.transport = PayloadTransport::inline_payload;
  }
  return r;
}

MockBackend::MockBackend(MockConfig config, GroundTruthIndex index)
    : config_(std::move(config)), index_(std::move(index)) {}

TransportReply MockBackend::handle(const std::string& body) const {
  try {
    const auto request = decode_request(body);
    auto response = mock_respond(request, config_, index_);
    if (response.attention && config_.dump_dir && response.attention->total_weights() * 4 >= config_.inline_limit_bytes) {
      const auto name = fmt::format("{}.attn", request.trial_id.empty()
                                                   ? sha256_hex(body).substr(0, 32)
                                                   : request.trial_id);
      write_dump(*config_.dump_dir / name, *response.attention);
      return {200, encode_response(response, name)};
    }
    return {200, encode_response(response)};
  } catch (const UnknownImage& e) {
    return {404, encode_error(e.kind(), e.what())};
  } catch (const SchemaError& e) {
    return {400, encode_error(e.kind(), e.what())};
  } catch (const std::exception& e) {
    return {500, encode_error("BackendError", e.what())};
  }
}

TransportReply MockTransport::post(std::string_view path, const std::string& body) {
  if (path != kExaminePath) return {404, encode_error("BackendError", "no such route")};
  return backend_.handle(body);
}

// ---------------------------------------------------------------------------
// HTTP server

struct MockServer::Impl {
  const MockBackend& backend;
  httplib::Server server;
};

MockServer::MockServer(const MockBackend& backend) : impl_(new Impl{backend, {}}) {
  impl_->server.Post(std::string(kExaminePath), [this](const httplib::Request& req, httplib::Response& res) {
    const auto reply = impl_->backend.handle(req.body);
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  });
}

MockServer::~MockServer() { stop(); }

int MockServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

void MockServer::listen() { impl_->server.listen_after_bind(); }

void MockServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace vlmprobe
