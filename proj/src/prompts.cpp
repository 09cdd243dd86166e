#include "vlmprobe/prompts.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "vlmprobe/errors.hpp"

namespace vlmprobe {

namespace detail {
extern const std::string_view kBuiltinPromptCatalog;
}

using nlohmann::json;

std::string PromptTemplate::id() const { return fmt::format("{}/{}", to_string(task_class), level); }

const PromptCatalog& PromptCatalog::builtin() {
  static const PromptCatalog catalog = from_json(detail::kBuiltinPromptCatalog);
  return catalog;
}

PromptCatalog PromptCatalog::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open prompt catalog {}", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

PromptCatalog PromptCatalog::from_json(std::string_view text) {
  const json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw ConfigError("prompt catalog is not a JSON object");

  PromptCatalog catalog;
  try {
    catalog.version_ = doc.at("catalog_version").get<std::string>();
    for (auto shape : kAllShapes) catalog.shape_words_[shape] = std::string(plural(shape));
    if (doc.contains("shape_words")) {
      for (const auto& [name, word] : doc.at("shape_words").items()) {
        const auto shape = parse_shape(name);
        if (!shape) throw ConfigError(fmt::format("prompt catalog: unknown shape '{}'", name));
        catalog.shape_words_[*shape] = word.get<std::string>();
      }
    }
    for (const auto& t : doc.at("templates")) {
      PromptTemplate tmpl;
      const auto task_name = t.at("task_class").get<std::string>();
      const auto task = parse_task_class(task_name);
      if (!task) throw UnknownTaskClass(fmt::format("prompt catalog: unknown task_class '{}'", task_name));
      tmpl.task_class = *task;
      tmpl.level = t.at("level").get<int>();
      tmpl.text = t.at("text").get<std::string>();
      const auto format = parse_answer_format(t.at("answer_format").get<std::string>());
      if (!format) throw ConfigError(fmt::format("prompt catalog: bad answer_format in {}", tmpl.id()));
      tmpl.answer_format = *format;
      catalog.templates_[tmpl.task_class].push_back(std::move(tmpl));
    }
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("prompt catalog: {}", e.what()));
  }

  if (catalog.templates_.empty()) throw ConfigError("prompt catalog has no templates");
  for (auto& [task, list] : catalog.templates_) {
    std::sort(list.begin(), list.end(), [](const auto& a, const auto& b) { return a.level < b.level; });
    if (list.size() != 3 || list[0].level != 1 || list[1].level != 2 || list[2].level != 3) {
      throw ConfigError(fmt::format("prompt catalog: task '{}' needs exactly levels 1, 2, 3", to_string(task)));
    }
  }
  return catalog;
}

const std::vector<PromptTemplate>& PromptCatalog::list_templates(TaskClass task) const {
  const auto it = templates_.find(task);
  if (it == templates_.end()) {
    throw UnknownTaskClass(fmt::format("no prompts for task class '{}'", to_string(task)));
  }
  return it->second;
}

const std::vector<PromptTemplate>& PromptCatalog::list_templates(std::string_view task) const {
  const auto parsed = parse_task_class(task);
  if (!parsed) throw UnknownTaskClass(fmt::format("unknown task class '{}'", task));
  return list_templates(*parsed);
}

PromptInstance PromptCatalog::instantiate(const PromptTemplate& tmpl, std::optional<ShapeKind> shape) const {
  if (tmpl.has_slot() && !shape) {
    throw MissingShapeError(fmt::format("template {} needs a shape", tmpl.id()));
  }
  if (!tmpl.has_slot() && shape) {
    throw UnexpectedShapeError(fmt::format("template {} has no shape slot", tmpl.id()));
  }
  std::string text = tmpl.text;
  if (shape) {
    const auto& word = shape_words_.at(*shape);
    for (auto pos = text.find(kShapeSlot); pos != std::string::npos; pos = text.find(kShapeSlot, pos + word.size())) {
      text.replace(pos, kShapeSlot.size(), word);
    }
  }
  return {tmpl.id(), tmpl.task_class, tmpl.level, tmpl.answer_format, std::move(text), shape};
}

}  // namespace vlmprobe
