#include <doctest.h>

#include <nlohmann/json.hpp>

#include "vlmprobe/corpus.hpp"
#include "vlmprobe/errors.hpp"
#include "vlmprobe/raster.hpp"
#include "../support/oracles.hpp"

using namespace vlmprobe;
using nlohmann::json;

namespace {

void write_png(const std::filesystem::path& path, int w = 16, int h = 12) {
  write_file_atomic(path, encode_png(Image(w, h, {200, 10, 10})));
}

void write_json(const std::filesystem::path& path, const json& j) { write_file_atomic(path, j.dump(2)); }

json manifest(const std::string& task, std::vector<std::pair<std::string, int>> entries) {
  json j{{"schema_version", 1}, {"task_class", task}, {"source_note", "test"}, {"entries", json::array()}};
  for (const auto& [path, gt] : entries) {
    j["entries"].push_back({{"image_path", path}, {"ground_truth_count", gt}, {"label", {{"note", "altered"}}}});
  }
  return j;
}

}  // namespace

TEST_SUITE("corpus") {
  TEST_CASE("altered animal and flag corpora carry the +1 ground truths") {
    TempDir dir;
    write_png(dir / "dog.png");
    write_png(dir / "flag.png");
    write_json(dir / "animals.json", manifest("animal_legs", {{"dog.png", 5}}));
    write_json(dir / "flags.json", manifest("flag_stars", {{"flag.png", 51}}));

    const auto animals = load_corpus(dir / "animals.json");
    CHECK(animals.task_class == TaskClass::animal_legs);
    REQUIRE(animals.entries.size() == 1);
    CHECK(animals.entries[0].ground_truth_count == 5);
    CHECK(animals.entries[0].resolved_path == dir / "dog.png");
    CHECK(json::parse(animals.entries[0].label_json)["note"] == "altered");

    const auto flags = load_corpus(dir / "flags.json");
    CHECK(flags.task_class == TaskClass::flag_stars);
    CHECK(flags.entries[0].ground_truth_count == 51);
    CHECK_FALSE(flags.bucket_of(flags.entries[0]));
  }

  TEST_CASE("loading is idempotent") {
    TempDir dir;
    write_png(dir / "a.png");
    write_json(dir / "m.json", manifest("flag_stars", {{"a.png", 3}}));
    CHECK(load_corpus(dir / "m.json") == load_corpus(dir / "m.json"));
  }

  TEST_CASE("all missing files are reported together") {
    TempDir dir;
    write_png(dir / "present.png");
    write_json(dir / "m.json", manifest("animal_legs", {{"gone1.png", 5}, {"present.png", 5}, {"gone2.png", 5}}));
    try {
      load_corpus(dir / "m.json");
      FAIL("expected MissingImageError");
    } catch (const MissingImageError& e) {
      CHECK(e.missing() == std::vector<std::string>{"gone1.png", "gone2.png"});
      CHECK(std::string(e.what()).find("gone1.png") != std::string::npos);
    }
  }

  TEST_CASE("invalid counts, schemas and documents are rejected") {
    TempDir dir;
    write_png(dir / "a.png");
    write_json(dir / "zero.json", manifest("animal_legs", {{"a.png", 0}}));
    CHECK_THROWS_AS(load_corpus(dir / "zero.json"), InvalidCountError);

    auto bad_version = manifest("animal_legs", {{"a.png", 4}});
    bad_version["schema_version"] = 99;
    write_json(dir / "v.json", bad_version);
    CHECK_THROWS_AS(load_corpus(dir / "v.json"), ManifestParseError);

    write_json(dir / "task.json", manifest("birds", {{"a.png", 4}}));
    CHECK_THROWS_AS(load_corpus(dir / "task.json"), ManifestParseError);

    write_file_atomic(dir / "garbage.json", std::string_view("{not json"));
    CHECK_THROWS_AS(load_corpus(dir / "garbage.json"), ManifestParseError);
    CHECK_THROWS_AS(load_corpus(dir / "absent.json"), ManifestParseError);
  }

  TEST_CASE("undecodable images are rejected") {
    TempDir dir;
    write_file_atomic(dir / "broken.png", std::string_view("\x89PNG\r\n\x1a\nnot really"));
    write_json(dir / "m.json", manifest("flag_stars", {{"broken.png", 3}}));
    CHECK_THROWS_AS(load_corpus(dir / "m.json"), ImageDecodeError);
  }

  TEST_CASE("skeleton lists images with placeholder counts") {
    TempDir dir;
    write_png(dir / "b.png");
    write_png(dir / "a.png");
    write_file_atomic(dir / "notes.txt", std::string_view("x"));
    const auto j = json::parse(corpus_skeleton(dir.path(), TaskClass::flag_stars));
    CHECK(j["schema_version"] == 1);
    CHECK(j["task_class"] == "flag_stars");
    REQUIRE(j["entries"].size() == 2);
    CHECK(j["entries"][0]["image_path"] == "a.png");
    CHECK(j["entries"][0]["ground_truth_count"] == 0);
  }

  TEST_CASE("image probing reads png headers") {
    const auto png = encode_png(Image(33, 21, {1, 2, 3}));
    const auto size = probe_image_size(png);
    REQUIRE(size);
    CHECK(size->width == 33);
    CHECK(size->height == 21);
    CHECK(sniff_image_format(png) == "png");
    const Bytes jpeg_magic{0xff, 0xd8, 0xff, 0xe0};
    CHECK(sniff_image_format(jpeg_magic) == "jpeg");
    CHECK_THROWS_AS(verify_decodes(jpeg_magic), ImageDecodeError);
  }
}
