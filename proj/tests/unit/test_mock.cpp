#include <doctest.h>
#include <fmt/format.h>

#include <thread>

#include <nlohmann/json.hpp>

#include "vlmprobe/attention.hpp"
#include "vlmprobe/errors.hpp"
#include "vlmprobe/mock.hpp"
#include "vlmprobe/parsing.hpp"
#include "vlmprobe/raster.hpp"
#include "../support/oracles.hpp"

using namespace vlmprobe;

namespace {

struct Fixture {
  Bytes image = encode_png(Image(100, 60, {255, 255, 255}));
  GroundTruthIndex index;
  Fixture() { index.add(sha256_hex(image), 14); }

  ExamineRequest request(std::string prompt, AttentionMode mode = AttentionMode::head_averaged) const {
    ExamineRequest q;
    q.image = image;
    q.prompt = std::move(prompt);
    q.attention_mode = mode;
    return q;
  }
};

const std::string kCurly = "Count the number of stars in this image. Answer with a number in curly brackets, e.g., {9}";
const std::string kJson = "Detect all distinct stars in the image and output valid JSON format";

}  // namespace

TEST_SUITE("mock") {
  TEST_CASE("presets and their bias functions") {
    CHECK(mock_preset_names() ==
          std::vector<std::string>{"zero-bias", "uniform", "underestimate", "overestimate", "under-above-10"});
    CHECK(mock_preset("zero-bias").bias.predict(17) == 17);
    CHECK(mock_preset("underestimate").bias.predict(17) == 14);
    CHECK(mock_preset("underestimate").bias.predict(2) == 0);
    CHECK(mock_preset("overestimate").bias.predict(17) == 20);
    CHECK(mock_preset("under-above-10").bias.predict(10) == 10);
    CHECK(mock_preset("under-above-10").bias.predict(11) == 9);
    CHECK(mock_preset("uniform").pattern == AttentionPattern::uniform);
    CHECK_THROWS_AS(mock_preset("sideways"), UnknownPreset);
  }

  TEST_CASE("config json round trip") {
    const auto c = mock_preset("under-above-10");
    const nlohmann::json j = c;
    const auto back = j.get<MockConfig>();
    CHECK(back.bias == c.bias);
    CHECK(back.num_layers == c.num_layers);
  }

  TEST_CASE("curly answers carry the biased count") {
    Fixture f;
    const auto r = mock_respond(f.request(kCurly), mock_preset("under-above-10"), f.index);
    CHECK(r.generated_text == render_curly_answer(12));
    CHECK(parse_curly_count(r.generated_text).predicted_count == 12);
    CHECK_NOTHROW(r.validate());
    CHECK(r.boundaries.n_vision == 4 * 3);
    CHECK(r.boundaries.input_len == r.boundaries.n_vision + r.boundaries.n_prompt);
    CHECK(r.generated_tokens.back() == "<|im_end|>");
  }

  TEST_CASE("detection answers enumerate the count") {
    Fixture f;
    const auto r = mock_respond(f.request(kJson), mock_preset("zero-bias"), f.index);
    const auto p = parse_json_detections(r.generated_text);
    CHECK(p.status == ParseStatus::ok);
    CHECK(p.predicted_count == 14);
    CHECK_FALSE(p.declared_count);

    auto q = f.request("Outline the position of each star in this image and output all the coordinates in JSON "
                       "format. Also count the number of stars.");
    const auto wrapped = parse_json_detections(mock_respond(q, mock_preset("zero-bias"), f.index).generated_text);
    CHECK(wrapped.predicted_count == 14);
    CHECK(wrapped.declared_count == 14);
  }

  TEST_CASE("responses are deterministic and keyed on the request") {
    Fixture f;
    const auto c = mock_preset("zero-bias");
    const auto a = mock_respond(f.request(kCurly), c, f.index);
    const auto b = mock_respond(f.request(kCurly), c, f.index);
    CHECK(encode_response(a) == encode_response(b));
    auto other = f.request(kCurly);
    other.generation.seed = 1;
    CHECK(encode_response(mock_respond(other, c, f.index)) != encode_response(a));
  }

  TEST_CASE("attention rows are softmax-normalized") {
    Fixture f;
    const auto r = mock_respond(f.request(kCurly, AttentionMode::full), mock_preset("zero-bias"), f.index);
    REQUIRE(r.attention);
    CHECK(r.attention->num_heads == 8);
    for (int g = 1; g <= r.attention->generated; ++g) {
      for (int l = 0; l < r.attention->num_layers; ++l) {
        for (int h = 0; h < r.attention->num_heads; ++h) {
          double s = 0;
          for (float w : r.attention->row(g, l, h)) s += w;
          CHECK(s == doctest::Approx(1.0).epsilon(1e-3));
        }
      }
    }
  }

  TEST_CASE("head_averaged payload is the head mean of the full payload") {
    Fixture f;
    const auto c = mock_preset("zero-bias");
    const auto full = mock_respond(f.request(kCurly, AttentionMode::full), c, f.index);
    const auto avg = mock_respond(f.request(kCurly, AttentionMode::head_averaged), c, f.index);
    REQUIRE(avg.attention->num_heads == 1);
    for (int g = 1; g <= full.attention->generated; ++g) {
      const auto v = reduce_token(*full.attention, g);
      const auto w = reduce_token(*avg.attention, g);
      REQUIRE(v.size() == w.size());
      double worst = 0;
      for (std::size_t i = 0; i < v.size(); ++i) worst = std::max(worst, std::abs(v[i] - w[i]));
      CHECK(worst < 1e-7);
    }
    const auto pf = aggregate_trial(*full.attention, full.boundaries);
    const auto pa = aggregate_trial(*avg.attention, avg.boundaries);
    CHECK(pf.image == doctest::Approx(pa.image).epsilon(1e-6));
    CHECK(pf.generated == doctest::Approx(pa.generated).epsilon(1e-6));
  }

  TEST_CASE("uniform preset gives the closed form") {
    Fixture f;
    const auto r = mock_respond(f.request(kCurly), mock_preset("uniform"), f.index);
    const auto p = aggregate_trial(*r.attention, r.boundaries);
    double expected = 0;
    for (int g = 1; g <= r.boundaries.generated; ++g) {
      expected += static_cast<double>(r.boundaries.n_vision) / (r.boundaries.input_len + g - 1);
    }
    expected /= r.boundaries.generated;
    CHECK(std::abs(p.image - expected) < 1e-12);
  }

  TEST_CASE("max_new_tokens truncates the generation") {
    Fixture f;
    auto q = f.request(kCurly);
    q.generation.max_new_tokens = 2;
    const auto r = mock_respond(q, mock_preset("zero-bias"), f.index);
    CHECK(r.generated_tokens.size() == 2);
    CHECK(r.attention->generated == 2);
  }

  TEST_CASE("unknown images and malformed bodies map to status codes") {
    Fixture f;
    MockBackend backend(mock_preset("zero-bias"), f.index);
    auto q = f.request(kCurly);
    q.image = encode_png(Image(10, 10, {0, 0, 0}));
    CHECK_THROWS_AS(mock_respond(q, backend.config(), f.index), UnknownImage);
    CHECK(backend.handle(encode_request(q)).status == 404);
    CHECK(backend.handle("{").status == 400);
    CHECK(backend.handle(encode_request(f.request(kCurly))).status == 200);
  }

  TEST_CASE("large payloads travel as sidecar files") {
    Fixture f;
    TempDir dir;
    auto c = mock_preset("zero-bias");
    c.dump_dir = dir.path();
    c.inline_limit_bytes = 1024;
    MockBackend backend(c, f.index);
    MockTransport transport(backend);
    auto q = f.request(kCurly, AttentionMode::full);
    q.trial_id = "abc";
    SubmitOptions o;
    o.dump_root = dir.path();
    const auto sidecar = submit(q, transport, o).response;
    CHECK(sidecar.transport == PayloadTransport::sidecar);
    CHECK(std::filesystem::exists(dir / "abc.attn"));

    MockBackend inline_backend(mock_preset("zero-bias"), f.index);
    MockTransport inline_transport(inline_backend);
    const auto inl = submit(q, inline_transport, o).response;
    CHECK(inl.transport == PayloadTransport::inline_payload);
    CHECK(*inl.attention == *sidecar.attention);
    CHECK(aggregate_trial(*inl.attention, inl.boundaries) == aggregate_trial(*sidecar.attention, sidecar.boundaries));
  }

  TEST_CASE("http server round trip") {
    Fixture f;
    MockBackend backend(mock_preset("overestimate"), f.index);
    MockServer server(backend);
    const int port = server.bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    std::thread loop([&] { server.listen(); });
    HttpTransport http(fmt::format("http://127.0.0.1:{}", port), std::chrono::seconds(10));
    SubmitResult result;
    for (int attempt = 0; attempt < 50; ++attempt) {
      try {
        result = submit(f.request(kCurly), http, {});
        break;
      } catch (const TransportError&) {
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
      }
    }
    server.stop();
    loop.join();
    CHECK(parse_curly_count(result.response.generated_text).predicted_count == 17);
    CHECK(result.response.backend.model_id == "mock:overestimate");
  }
}
