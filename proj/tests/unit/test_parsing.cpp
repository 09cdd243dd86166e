#include <doctest.h>

#include "vlmprobe/mock.hpp"
#include "vlmprobe/parsing.hpp"

using namespace vlmprobe;

TEST_SUITE("parsing") {
  TEST_CASE("curly examples") {
    auto p = parse_curly_count("{9}");
    CHECK(p.status == ParseStatus::ok);
    CHECK(p.predicted_count == 9);

    p = parse_curly_count("I count them: {12}.");
    CHECK(p.status == ParseStatus::ok);
    CHECK(p.predicted_count == 12);

    p = parse_curly_count("There are 7 stars.");
    CHECK(p.status == ParseStatus::fallback);
    CHECK(p.predicted_count == 7);

    p = parse_curly_count("no idea");
    CHECK(p.status == ParseStatus::unparseable);
    CHECK_FALSE(p.predicted_count);
  }

  TEST_CASE("first curly wins and disagreements are noted") {
    const auto p = parse_curly_count("{3} ... actually { 4 }");
    CHECK(p.predicted_count == 3);
    CHECK(p.notes.size() == 2);
    CHECK(parse_curly_count("{5} and {5}").notes.size() == 1);
  }

  TEST_CASE("curly edge cases") {
    CHECK(parse_curly_count("{ 0 }").predicted_count == 0);
    CHECK(parse_curly_count("{-3}").status == ParseStatus::unparseable);  // negatives are not counts
    CHECK(parse_curly_count("{1234567890123}").status != ParseStatus::ok);
    CHECK(parse_curly_count("{x} 3.5 v2").status == ParseStatus::unparseable);
    CHECK(parse_curly_count("counted 4, then 6").predicted_count == 6);
  }

  TEST_CASE("json examples") {
    auto p = parse_json_detections(
        "Here you go:\n```json\n[{\"bbox_2d\": [1,2,3,4]}, {\"bbox_2d\": [5,6,7,8]}, {\"bbox_2d\": [9,9,9,9]}]\n```");
    CHECK(p.status == ParseStatus::ok);
    CHECK(p.predicted_count == 3);
    REQUIRE(p.detection_boxes);
    CHECK((*p.detection_boxes)[1] == std::vector<double>{5, 6, 7, 8});

    p = parse_json_detections(R"({"legs": [{"x":1,"y":1},{"x":2,"y":2},{"x":3,"y":3},{"x":4,"y":4}], "count": 5})");
    CHECK(p.status == ParseStatus::ok);
    CHECK(p.predicted_count == 4);
    CHECK(p.declared_count == 5);
    CHECK_FALSE(p.notes.empty());

    p = parse_json_detections("The animal has legs: 5");
    CHECK(p.status == ParseStatus::fallback);
    CHECK(p.predicted_count == 5);
  }

  TEST_CASE("json prose, broken fragments and empty arrays") {
    auto p = parse_json_detections("Sure [not json] then {\"items\": []} done");
    CHECK(p.status == ParseStatus::ok);
    CHECK(p.predicted_count == 0);

    p = parse_json_detections("{\"total\": 7}");
    CHECK(p.status == ParseStatus::fallback);
    CHECK(p.predicted_count == 7);

    p = parse_json_detections("[[1,2],[3,4]] trailing");
    CHECK(p.predicted_count == 2);

    // unterminated fence: the array never closes, so only the integer fallback applies
    p = parse_json_detections("```json\n[{\"a\":1}, {\"a\":2}\n");
    CHECK(p.status == ParseStatus::fallback);
    CHECK(p.predicted_count == 2);

    CHECK(parse_json_detections("").status == ParseStatus::unparseable);
    CHECK(parse_json_detections("[[[[[[[[").status == ParseStatus::unparseable);
  }

  TEST_CASE("parse_answer dispatches by format") {
    CHECK(parse_answer("{4}", AnswerFormat::curly_count).predicted_count == 4);
    CHECK(parse_answer("[{}, {}]", AnswerFormat::json_detection).predicted_count == 2);
  }

  TEST_CASE("mock renderers round trip") {
    for (int n : {0, 1, 9, 10, 999, 1000}) CHECK(parse_curly_count(render_curly_answer(n)).predicted_count == n);
    for (int k : {0, 1, 7, 50}) {
      CHECK(parse_json_detections(render_detection_answer(k, false, 5)).predicted_count == k);
      const auto wrapped = parse_json_detections(render_detection_answer(k, true, 5));
      CHECK(wrapped.predicted_count == k);
      CHECK(wrapped.declared_count == k);
    }
  }

  TEST_CASE("status names") {
    for (auto s : {ParseStatus::ok, ParseStatus::fallback, ParseStatus::unparseable}) {
      CHECK(parse_parse_status(to_string(s)) == s);
    }
  }
}
