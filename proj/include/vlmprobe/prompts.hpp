#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vlmprobe/vocabulary.hpp"

namespace vlmprobe {

inline constexpr std::string_view kShapeSlot = "<shape>";

struct PromptTemplate {
  TaskClass task_class = TaskClass::synthetic;
  int level = 1;  // 1..3, higher is more specific
  std::string text;
  AnswerFormat answer_format = AnswerFormat::curly_count;

  bool has_slot() const noexcept { return text.find(kShapeSlot) != std::string::npos; }
  std::string id() const;  // "synthetic/2"
  friend bool operator==(const PromptTemplate&, const PromptTemplate&) = default;
};

struct PromptInstance {
  std::string template_id;
  TaskClass task_class = TaskClass::synthetic;
  int level = 1;
  AnswerFormat answer_format = AnswerFormat::curly_count;
  std::string text;
  std::optional<ShapeKind> shape;
  friend bool operator==(const PromptInstance&, const PromptInstance&) = default;
};

/// Immutable prompt catalog: three templates per task class, stored in
/// specificity order.
class PromptCatalog {
 public:
  /// The frozen v1 catalog compiled into the library.
  static const PromptCatalog& builtin();
  static PromptCatalog from_json(std::string_view text);
  static PromptCatalog load(const std::filesystem::path& path);

  const std::string& version() const noexcept { return version_; }

  /// Exactly three templates, level 1 first. Throws UnknownTaskClass.
  const std::vector<PromptTemplate>& list_templates(TaskClass task) const;
  const std::vector<PromptTemplate>& list_templates(std::string_view task) const;

  /// Fills the shape slot with the catalog's plural word for `shape`.
  /// A shape must be given exactly when the template has a slot.
  PromptInstance instantiate(const PromptTemplate& tmpl, std::optional<ShapeKind> shape) const;

 private:
  std::string version_;
  std::map<ShapeKind, std::string> shape_words_;
  std::map<TaskClass, std::vector<PromptTemplate>> templates_;
};

}  // namespace vlmprobe
