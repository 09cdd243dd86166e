#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace vlmprobe {

enum class ShapeKind { circle, triangle, rectangle, star, polygon };

inline constexpr std::array<ShapeKind, 5> kAllShapes = {ShapeKind::circle, ShapeKind::triangle,
                                                         ShapeKind::rectangle, ShapeKind::star,
                                                         ShapeKind::polygon};

std::string_view to_string(ShapeKind shape) noexcept;
/// Word substituted into prompt templates, e.g. "stars".
std::string_view plural(ShapeKind shape) noexcept;
std::optional<ShapeKind> parse_shape(std::string_view name) noexcept;

enum class TaskClass { synthetic, animal_legs, flag_stars };

inline constexpr std::array<TaskClass, 3> kAllTaskClasses = {TaskClass::synthetic, TaskClass::animal_legs,
                                                             TaskClass::flag_stars};

std::string_view to_string(TaskClass task) noexcept;
std::optional<TaskClass> parse_task_class(std::string_view name) noexcept;

enum class AnswerFormat { curly_count, json_detection };

std::string_view to_string(AnswerFormat format) noexcept;
std::optional<AnswerFormat> parse_answer_format(std::string_view name) noexcept;

}  // namespace vlmprobe
