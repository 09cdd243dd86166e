#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vlmprobe/vocabulary.hpp"

namespace vlmprobe {

enum class ParseStatus { ok, fallback, unparseable };

std::string_view to_string(ParseStatus status) noexcept;
std::optional<ParseStatus> parse_parse_status(std::string_view name) noexcept;

struct ParseOutcome {
  ParseStatus status = ParseStatus::unparseable;
  std::optional<int> predicted_count;
  std::optional<int> declared_count;
  /// Numeric coordinates of each detection, in document order.
  std::optional<std::vector<std::vector<double>>> detection_boxes;
  std::vector<std::string> notes;

  friend bool operator==(const ParseOutcome&, const ParseOutcome&) = default;
};

/// First `{n}` in the text wins; otherwise the last standalone integer with
/// status fallback. Never throws.
ParseOutcome parse_curly_count(std::string_view text);

/// Finds the first JSON value (code fences stripped) holding an array of
/// detections; its length is the count. A "count"-like field is kept as
/// declared_count. Falls back to the last standalone integer. Never throws.
ParseOutcome parse_json_detections(std::string_view text);

ParseOutcome parse_answer(std::string_view text, AnswerFormat format);

}  // namespace vlmprobe
