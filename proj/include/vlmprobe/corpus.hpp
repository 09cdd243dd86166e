#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vlmprobe/dataset.hpp"
#include "vlmprobe/vocabulary.hpp"

namespace vlmprobe {

/// One stimulus image with its ground truth. Synthetic entries also carry the
/// shape and the count bucket they were drawn from.
struct CorpusEntry {
  std::string image_path;               // as written in the manifest
  std::filesystem::path resolved_path;  // manifest directory + image_path
  int ground_truth_count = 0;
  std::optional<ShapeKind> shape;
  std::optional<int> bucket_index;
  std::string label_json = "{}";  // free-form label metadata, compact JSON
  friend bool operator==(const CorpusEntry&, const CorpusEntry&) = default;
};

/// Uniform view over synthetic and externally supplied stimulus sets.
struct CorpusManifest {
  int schema_version = kManifestSchemaVersion;
  TaskClass task_class = TaskClass::synthetic;
  std::string source_note;
  std::filesystem::path manifest_path;
  std::vector<CountBucket> count_buckets;  // from the dataset config, when present
  std::vector<CorpusEntry> entries;

  std::optional<CountBucket> bucket_of(const CorpusEntry& entry) const;
  friend bool operator==(const CorpusManifest&, const CorpusManifest&) = default;
};

/// Parses and validates a manifest. Every referenced file must exist and decode;
/// all missing files are reported together in one MissingImageError.
CorpusManifest load_corpus(const std::filesystem::path& manifest_path);

/// Manifest skeleton listing every PNG/JPEG under image_dir with a placeholder
/// ground truth of 0, to be filled in by hand before loading.
std::string corpus_skeleton(const std::filesystem::path& image_dir, TaskClass task_class);

}  // namespace vlmprobe
