#include "vlmprobe/parsing.hpp"

#include <algorithm>
#include <cctype>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace vlmprobe {

using ordered_json = nlohmann::ordered_json;

std::string_view to_string(ParseStatus status) noexcept {
  switch (status) {
    case ParseStatus::ok: return "ok";
    case ParseStatus::fallback: return "fallback";
    case ParseStatus::unparseable: return "unparseable";
  }
  return "?";
}

std::optional<ParseStatus> parse_parse_status(std::string_view name) noexcept {
  if (name == "ok") return ParseStatus::ok;
  if (name == "fallback") return ParseStatus::fallback;
  if (name == "unparseable") return ParseStatus::unparseable;
  return std::nullopt;
}

namespace {

constexpr std::size_t kMaxDigits = 9;
constexpr int kMaxJsonDepth = 64;
constexpr int kMaxJsonAttempts = 256;
// Bounds the quadratic worst case of bracket matching on hostile text.
constexpr std::size_t kMaxScanBytes = 8u << 20;

bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_word(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

int to_int(std::string_view digits) {
  int v = 0;
  for (char c : digits) v = v * 10 + (c - '0');
  return v;
}

/// Last digit run that is not glued to a word, a sign, or a decimal point.
std::optional<int> last_standalone_integer(std::string_view text) {
  std::optional<int> found;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_digit(text[i])) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    while (i < text.size() && is_digit(text[i])) ++i;
    const char before = start > 0 ? text[start - 1] : ' ';
    const bool decimal_after = i + 1 < text.size() && text[i] == '.' && is_digit(text[i + 1]);
    const bool glued_after = i < text.size() && is_word(text[i]);
    if (is_word(before) || before == '.' || before == '-' || decimal_after || glued_after) continue;
    if (i - start > kMaxDigits) continue;
    found = to_int(text.substr(start, i - start));
  }
  return found;
}

ParseOutcome integer_fallback(std::string_view text, ParseOutcome out) {
  if (const auto n = last_standalone_integer(text)) {
    out.status = ParseStatus::fallback;
    out.predicted_count = *n;
    out.notes.push_back("fallback: last standalone integer");
  } else {
    out.status = ParseStatus::unparseable;
    out.predicted_count.reset();
  }
  return out;
}

/// End (exclusive) of the bracketed value opening at `start`, or npos. Also
/// reports the maximum nesting depth reached.
std::size_t balanced_end(std::string_view text, std::size_t start, int& max_depth) {
  int depth = 0;
  max_depth = 0;
  bool in_string = false;
  for (std::size_t i = start; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '[' || c == '{') {
      max_depth = std::max(max_depth, ++depth);
    } else if (c == ']' || c == '}') {
      if (--depth == 0) return i + 1;
    }
  }
  return std::string_view::npos;
}

bool is_detection_array(const ordered_json& v) {
  if (!v.is_array()) return false;
  if (v.empty()) return true;
  return std::all_of(v.begin(), v.end(), [](const auto& e) { return e.is_object(); }) ||
         std::all_of(v.begin(), v.end(), [](const auto& e) { return e.is_array(); });
}

/// Preorder search for a detection array; `allow_empty` admits [] matches.
const ordered_json* find_detections(const ordered_json& v, bool allow_empty, int depth) {
  if (depth > kMaxJsonDepth) return nullptr;
  if (is_detection_array(v) && (allow_empty || !v.empty())) return &v;
  if (v.is_object()) {
    for (const auto& [key, child] : v.items()) {
      if (const auto* hit = find_detections(child, allow_empty, depth + 1)) return hit;
    }
  }
  return nullptr;
}

bool count_like_key(std::string key) {
  std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
  return key.find("count") != std::string::npos || key.find("total") != std::string::npos ||
         key.find("number") != std::string::npos || key == "num" || key == "n";
}

std::optional<int> integral_value(const ordered_json& v) {
  if (v.is_number_unsigned()) {
    const auto u = v.get<std::uint64_t>();
    if (u <= 999'999'999u) return static_cast<int>(u);
  } else if (v.is_number_integer()) {
    const auto i = v.get<std::int64_t>();
    if (i >= 0 && i <= 999'999'999) return static_cast<int>(i);
  } else if (v.is_number_float()) {
    const double d = v.get<double>();
    if (d >= 0 && d <= 999'999'999 && d == static_cast<double>(static_cast<long long>(d))) return static_cast<int>(d);
  }
  return std::nullopt;
}

std::optional<int> find_declared_count(const ordered_json& v, int depth) {
  if (depth > kMaxJsonDepth || !v.is_structured()) return std::nullopt;
  if (v.is_object()) {
    for (const auto& [key, child] : v.items()) {
      if (count_like_key(key)) {
        if (auto n = integral_value(child)) return n;
      }
    }
  }
  for (const auto& child : v) {
    if (auto n = find_declared_count(child, depth + 1)) return n;
  }
  return std::nullopt;
}

void collect_numbers(const ordered_json& v, std::vector<double>& out, int depth) {
  if (depth > kMaxJsonDepth) return;
  if (v.is_number()) {
    out.push_back(v.get<double>());
  } else if (v.is_structured()) {
    for (const auto& child : v) collect_numbers(child, out, depth + 1);
  }
}

std::vector<std::vector<double>> detection_coordinates(const ordered_json& detections) {
  std::vector<std::vector<double>> boxes;
  for (const auto& d : detections) {
    std::vector<double> coords;
    collect_numbers(d, coords, 0);
    boxes.push_back(std::move(coords));
  }
  return boxes;
}

/// Inner text of each ``` fenced block, in order.
std::vector<std::string_view> fenced_blocks(std::string_view text) {
  std::vector<std::string_view> blocks;
  std::size_t pos = 0;
  while (true) {
    const auto open = text.find("```", pos);
    if (open == std::string_view::npos) break;
    auto body = text.find('\n', open + 3);
    if (body == std::string_view::npos) break;
    ++body;
    const auto close = text.find("```", body);
    if (close == std::string_view::npos) {
      blocks.push_back(text.substr(body));
      break;
    }
    blocks.push_back(text.substr(body, close - body));
    pos = close + 3;
  }
  return blocks;
}

struct JsonHit {
  ordered_json value;
  ordered_json detections;
};

/// Scans a region for well-formed JSON values left to right.
std::optional<JsonHit> scan_region(std::string_view region, int& attempts, std::optional<ordered_json>& first_value) {
  std::size_t i = 0;
  std::size_t scanned = 0;
  while (i < region.size() && attempts < kMaxJsonAttempts) {
    if (region[i] != '[' && region[i] != '{') {
      ++i;
      continue;
    }
    int depth = 0;
    const auto end = balanced_end(region, i, depth);
    scanned += (end == std::string_view::npos ? region.size() : end) - i;
    if (scanned > kMaxScanBytes) return std::nullopt;
    if (end == std::string_view::npos || depth > kMaxJsonDepth) {
      ++i;
      continue;
    }
    ++attempts;
    auto value = ordered_json::parse(region.substr(i, end - i), nullptr, /*allow_exceptions=*/false);
    if (value.is_discarded() || !value.is_structured()) {
      ++i;
      continue;
    }
    const auto* detections = find_detections(value, false, 0);
    if (!detections) detections = find_detections(value, true, 0);
    if (detections) {
      auto copy = *detections;
      return JsonHit{std::move(value), std::move(copy)};
    }
    if (!first_value) first_value = std::move(value);
    i = end;
  }
  return std::nullopt;
}

}  // namespace

ParseOutcome parse_curly_count(std::string_view text) {
  ParseOutcome out;
  std::vector<int> matches;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '{') continue;
    std::size_t j = i + 1;
    while (j < text.size() && is_space(text[j])) ++j;
    const std::size_t digits = j;
    while (j < text.size() && is_digit(text[j])) ++j;
    const std::size_t n_digits = j - digits;
    while (j < text.size() && is_space(text[j])) ++j;
    if (n_digits == 0 || j >= text.size() || text[j] != '}') continue;
    if (n_digits > kMaxDigits) {
      out.notes.push_back("curly value too large to be a count");
      continue;
    }
    matches.push_back(to_int(text.substr(digits, n_digits)));
  }
  if (matches.empty()) return integer_fallback(text, std::move(out));

  out.status = ParseStatus::ok;
  out.predicted_count = matches.front();
  if (matches.size() > 1) {
    out.notes.push_back(fmt::format("multiple curly matches ({})", matches.size()));
    if (std::any_of(matches.begin(), matches.end(), [&](int m) { return m != matches.front(); })) {
      out.notes.push_back("curly matches disagree; first kept");
    }
  }
  return out;
}

ParseOutcome parse_json_detections(std::string_view text) {
  ParseOutcome out;
  int attempts = 0;
  std::optional<ordered_json> first_value;
  std::optional<JsonHit> hit;
  for (auto block : fenced_blocks(text)) {
    if ((hit = scan_region(block, attempts, first_value))) break;
  }
  if (!hit) hit = scan_region(text, attempts, first_value);

  if (hit) {
    const auto count = static_cast<int>(hit->detections.size());
    out.status = ParseStatus::ok;
    out.predicted_count = count;
    out.detection_boxes = detection_coordinates(hit->detections);
    out.declared_count = find_declared_count(hit->value, 0);
    if (out.declared_count && *out.declared_count != count) {
      out.notes.push_back(
          fmt::format("declared count {} differs from {} detections", *out.declared_count, count));
    }
    return out;
  }
  if (first_value) {
    if (auto declared = find_declared_count(*first_value, 0)) {
      out.status = ParseStatus::fallback;
      out.predicted_count = declared;
      out.declared_count = declared;
      out.notes.push_back("fallback: JSON without detections; declared count used");
      return out;
    }
  }
  return integer_fallback(text, std::move(out));
}

ParseOutcome parse_answer(std::string_view text, AnswerFormat format) {
  return format == AnswerFormat::curly_count ? parse_curly_count(text) : parse_json_detections(text);
}

}  // namespace vlmprobe
