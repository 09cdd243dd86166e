#include "vlmprobe/corpus.hpp"

#include <algorithm>
#include <fstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "vlmprobe/errors.hpp"
#include "vlmprobe/raster.hpp"

namespace vlmprobe {

using nlohmann::json;

std::optional<CountBucket> CorpusManifest::bucket_of(const CorpusEntry& entry) const {
  if (entry.bucket_index && *entry.bucket_index >= 0 &&
      static_cast<std::size_t>(*entry.bucket_index) < count_buckets.size()) {
    return count_buckets[static_cast<std::size_t>(*entry.bucket_index)];
  }
  return std::nullopt;
}

CorpusManifest load_corpus(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw ManifestParseError(fmt::format("cannot open manifest {}", manifest_path.string()));
  const json doc = json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw ManifestParseError(fmt::format("{} is not a JSON object", manifest_path.string()));
  }

  CorpusManifest m;
  m.manifest_path = manifest_path;
  try {
    m.schema_version = doc.at("schema_version").get<int>();
    if (m.schema_version != kManifestSchemaVersion) {
      throw ManifestParseError(fmt::format("unsupported schema_version {}", m.schema_version));
    }
    const auto task = parse_task_class(doc.value("task_class", "synthetic"));
    if (!task) throw ManifestParseError(fmt::format("unknown task_class '{}'", doc.value("task_class", "")));
    m.task_class = *task;
    m.source_note = doc.value("source_note", "");
    if (doc.contains("config")) {
      DatasetConfig config = doc.at("config").get<DatasetConfig>();
      m.count_buckets = config.count_buckets;
    }

    const auto base = manifest_path.parent_path();
    std::vector<std::string> missing;
    for (const auto& e : doc.at("entries")) {
      CorpusEntry entry;
      entry.image_path = e.at("image_path").get<std::string>();
      entry.resolved_path = base / entry.image_path;
      entry.ground_truth_count = e.at("ground_truth_count").get<int>();
      if (e.contains("shape")) {
        entry.shape = parse_shape(e.at("shape").get<std::string>());
        if (!entry.shape) throw ManifestParseError(fmt::format("{}: unknown shape", entry.image_path));
      }
      if (e.contains("bucket_index")) entry.bucket_index = e.at("bucket_index").get<int>();
      if (e.contains("label")) entry.label_json = e.at("label").dump();
      if (entry.ground_truth_count < 1) {
        throw InvalidCountError(
            fmt::format("{}: ground_truth_count must be >= 1 (got {})", entry.image_path, entry.ground_truth_count));
      }
      if (!std::filesystem::is_regular_file(entry.resolved_path)) missing.push_back(entry.image_path);
      m.entries.push_back(std::move(entry));
    }
    if (!missing.empty()) throw MissingImageError(std::move(missing));
  } catch (const json::exception& e) {
    throw ManifestParseError(fmt::format("{}: {}", manifest_path.string(), e.what()));
  } catch (const ConfigError& e) {
    throw ManifestParseError(fmt::format("{}: {}", manifest_path.string(), e.what()));
  }

  for (const auto& entry : m.entries) {
    try {
      verify_decodes(read_file(entry.resolved_path));
    } catch (const Error& e) {
      throw ImageDecodeError(fmt::format("{}: {}", entry.image_path, e.what()));
    }
  }
  return m;
}

std::string corpus_skeleton(const std::filesystem::path& image_dir, TaskClass task_class) {
  std::vector<std::string> files;
  for (const auto& item : std::filesystem::recursive_directory_iterator(image_dir)) {
    if (!item.is_regular_file()) continue;
    auto ext = item.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") {
      files.push_back(std::filesystem::relative(item.path(), image_dir).generic_string());
    }
  }
  std::sort(files.begin(), files.end());
  json entries = json::array();
  for (const auto& f : files) {
    entries.push_back({{"image_path", f}, {"ground_truth_count", 0}, {"label", json::object()}});
  }
  const json doc{{"schema_version", kManifestSchemaVersion},
                 {"task_class", to_string(task_class)},
                 {"source_note", "fill in ground_truth_count for every entry"},
                 {"entries", entries}};
  return doc.dump(2) + "\n";
}

}  // namespace vlmprobe
