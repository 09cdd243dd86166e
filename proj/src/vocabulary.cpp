#include "vlmprobe/vocabulary.hpp"

namespace vlmprobe {

std::string_view to_string(ShapeKind shape) noexcept {
  switch (shape) {
    case ShapeKind::circle: return "circle";
    case ShapeKind::triangle: return "triangle";
    case ShapeKind::rectangle: return "rectangle";
    case ShapeKind::star: return "star";
    case ShapeKind::polygon: return "polygon";
  }
  return "?";
}

std::string_view plural(ShapeKind shape) noexcept {
  switch (shape) {
    case ShapeKind::circle: return "circles";
    case ShapeKind::triangle: return "triangles";
    case ShapeKind::rectangle: return "rectangles";
    case ShapeKind::star: return "stars";
    case ShapeKind::polygon: return "polygons";
  }
  return "?";
}

std::optional<ShapeKind> parse_shape(std::string_view name) noexcept {
  for (auto s : kAllShapes) {
    if (to_string(s) == name) return s;
  }
  return std::nullopt;
}

std::string_view to_string(TaskClass task) noexcept {
  switch (task) {
    case TaskClass::synthetic: return "synthetic";
    case TaskClass::animal_legs: return "animal_legs";
    case TaskClass::flag_stars: return "flag_stars";
  }
  return "?";
}

std::optional<TaskClass> parse_task_class(std::string_view name) noexcept {
  for (auto t : kAllTaskClasses) {
    if (to_string(t) == name) return t;
  }
  return std::nullopt;
}

std::string_view to_string(AnswerFormat format) noexcept {
  return format == AnswerFormat::curly_count ? "curly_count" : "json_detection";
}

std::optional<AnswerFormat> parse_answer_format(std::string_view name) noexcept {
  if (name == "curly_count") return AnswerFormat::curly_count;
  if (name == "json_detection") return AnswerFormat::json_detection;
  return std::nullopt;
}

}  // namespace vlmprobe
