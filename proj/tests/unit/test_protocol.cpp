#include <doctest.h>

#include <deque>
#include <functional>

#include <nlohmann/json.hpp>

#include "vlmprobe/client.hpp"
#include "vlmprobe/errors.hpp"
#include "vlmprobe/protocol.hpp"
#include "../support/oracles.hpp"

using namespace vlmprobe;
using nlohmann::json;

namespace {

ExamineResponse tiny_response(int g_count = 1) {
  ExamineResponse r;
  r.generated_tokens.assign(static_cast<std::size_t>(g_count), "x");
  r.generated_text = std::string(static_cast<std::size_t>(g_count), 'x');
  r.boundaries = {2, 2, 4, g_count};
  r.backend = {"tiny", 1, 1, "test"};
  AttentionDump d;
  d.input_len = 4;
  d.generated = g_count;
  for (int g = 1; g <= g_count; ++g) d.tokens.emplace_back(static_cast<std::size_t>(3 + g), 0.25f);
  r.attention = d;
  r.transport = PayloadTransport::inline_payload;
  return r;
}

ExamineRequest tiny_request() {
  ExamineRequest q;
  q.image = {1, 2, 3, 4};
  q.prompt = "count";
  q.trial_id = "t1";
  return q;
}

/// Replays scripted replies; a missing status means a connection failure.
class ScriptedTransport final : public Transport {
 public:
  std::deque<std::optional<TransportReply>> script;
  int calls = 0;

  TransportReply post(std::string_view path, const std::string&) override {
    ++calls;
    CHECK(path == kExaminePath);
    REQUIRE_FALSE(script.empty());
    auto next = script.front();
    script.pop_front();
    if (!next) throw TransportError("connection reset by peer");
    return *next;
  }
  std::string describe() const override { return "scripted"; }
};

SubmitOptions fast() {
  SubmitOptions o;
  o.initial_backoff = std::chrono::milliseconds(1);
  return o;
}

}  // namespace

TEST_SUITE("protocol") {
  TEST_CASE("request round trip") {
    auto q = tiny_request();
    q.generation.max_new_tokens = 7;
    q.generation.seed = 11;
    q.attention_mode = AttentionMode::full;
    q.answer_format = AnswerFormat::json_detection;
    const auto back = decode_request(encode_request(q));
    CHECK(back.image == q.image);
    CHECK(back.prompt == q.prompt);
    CHECK(back.generation == q.generation);
    CHECK(back.attention_mode == AttentionMode::full);
    CHECK(back.answer_format == AnswerFormat::json_detection);
    CHECK(back.trial_id == "t1");
    const auto j = json::parse(encode_request(q));
    CHECK(j["image"]["data_base64"] == "AQIDBA==");
  }

  TEST_CASE("request validation") {
    auto q = tiny_request();
    q.generation.max_new_tokens = 0;
    CHECK_THROWS_AS(q.validate(), SchemaError);
    CHECK_THROWS_AS(decode_request("{}"), SchemaError);
    CHECK_THROWS_AS(decode_request("[1,2"), SchemaError);
  }

  TEST_CASE("inline response round trip") {
    const auto r = tiny_response(2);
    const auto back = decode_response(encode_response(r), ".");
    CHECK(back.generated_text == r.generated_text);
    CHECK(back.boundaries == r.boundaries);
    CHECK(back.backend == r.backend);
    CHECK(back.transport == PayloadTransport::inline_payload);
    REQUIRE(back.attention);
    CHECK(*back.attention == *r.attention);
  }

  TEST_CASE("sidecar payloads resolve against the dump root") {
    TempDir dir;
    const auto r = tiny_response(3);
    write_dump(dir / "t1.attn", *r.attention);
    const auto back = decode_response(encode_response(r, "t1.attn"), dir.path());
    CHECK(back.transport == PayloadTransport::sidecar);
    CHECK(back.sidecar_path == "t1.attn");
    CHECK(*back.attention == *r.attention);
    CHECK_THROWS(decode_response(encode_response(r, "nope.attn"), dir.path()));
  }

  TEST_CASE("G=1 with a single length-S row is accepted") {
    CHECK_NOTHROW(decode_response(encode_response(tiny_response(1)), "."));
  }

  TEST_CASE("S+g-1 mismatch at g=2 is a dimension mismatch") {
    auto r = tiny_response(2);
    r.attention->tokens[1].pop_back();
    auto body = json::parse(encode_response(tiny_response(2)));
    body["attention"]["data_base64"] = base64_encode(
        [&] {
          auto bytes = encode_dump(tiny_response(2).attention.value());
          bytes.resize(bytes.size() - 4);
          return bytes;
        }());
    CHECK_THROWS_AS(decode_response(body.dump(), "."), DimensionMismatch);
    CHECK_THROWS_AS(r.validate(), DimensionMismatch);
  }

  TEST_CASE("response schema violations") {
    auto body = json::parse(encode_response(tiny_response(1)));
    auto broken = body;
    broken["boundaries"]["S"] = 5;
    CHECK_THROWS_AS(decode_response(broken.dump(), "."), SchemaError);
    broken = body;
    broken["generated_tokens"] = json::array({"a", "b"});
    CHECK_THROWS(decode_response(broken.dump(), "."));
    broken = body;
    broken.erase("generated_text");
    CHECK_THROWS_AS(decode_response(broken.dump(), "."), SchemaError);
    CHECK_THROWS_AS(decode_response("<html>", "."), SchemaError);
  }

  TEST_CASE("absent payload") {
    auto r = tiny_response(1);
    r.attention.reset();
    r.transport = PayloadTransport::absent;
    const auto back = decode_response(encode_response(r), ".");
    CHECK_FALSE(back.attention);
    CHECK(json::parse(encode_response(r))["attention"].is_null());
  }
}

TEST_SUITE("client") {
  TEST_CASE("transient connection reset then success") {
    ScriptedTransport t;
    t.script = {std::nullopt, TransportReply{200, encode_response(tiny_response())}};
    const auto result = submit(tiny_request(), t, fast());
    CHECK(result.retry_count == 1);
    CHECK(t.calls == 2);
    CHECK(result.response.generated_text == "x");
  }

  TEST_CASE("503 is retried like a transport failure") {
    ScriptedTransport t;
    t.script = {TransportReply{503, "busy"}, TransportReply{502, ""},
                TransportReply{200, encode_response(tiny_response())}};
    CHECK(submit(tiny_request(), t, fast()).retry_count == 2);
  }

  TEST_CASE("retries are bounded") {
    ScriptedTransport t;
    t.script = {std::nullopt, std::nullopt, std::nullopt, std::nullopt};
    CHECK_THROWS_AS(submit(tiny_request(), t, fast()), TransportError);
    CHECK(t.calls == 3);
  }

  TEST_CASE("schema errors are not retried") {
    ScriptedTransport t;
    t.script = {TransportReply{200, "{}"}, TransportReply{200, encode_response(tiny_response())}};
    CHECK_THROWS_AS(submit(tiny_request(), t, fast()), SchemaError);
    CHECK(t.calls == 1);
  }

  TEST_CASE("backend error bodies map to error kinds") {
    ScriptedTransport t;
    t.script = {TransportReply{404, encode_error("UnknownImage", "no such image")}};
    CHECK_THROWS_AS(submit(tiny_request(), t, fast()), UnknownImage);
    t.script = {TransportReply{400, encode_error("SchemaError", "bad")}};
    CHECK_THROWS_AS(submit(tiny_request(), t, fast()), SchemaError);
    t.script = {TransportReply{500, "oops"}};
    CHECK_THROWS_AS(submit(tiny_request(), t, fast()), BackendError);
  }

  TEST_CASE("unreachable http endpoint is a transport error") {
    HttpTransport t("http://127.0.0.1:9", std::chrono::seconds(1));
    SubmitOptions o = fast();
    o.max_attempts = 2;
    CHECK_THROWS_AS(submit(tiny_request(), t, o), TransportError);
  }
}
