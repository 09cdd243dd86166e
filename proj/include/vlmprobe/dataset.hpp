#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "vlmprobe/raster.hpp"
#include "vlmprobe/vocabulary.hpp"

namespace vlmprobe {

/// Inclusive integer count range, e.g. [11, 20].
struct CountBucket {
  int lo = 1;
  int hi = 1;

  bool contains(int count) const noexcept { return count >= lo && count <= hi; }
  int width() const noexcept { return hi - lo + 1; }
  friend bool operator==(const CountBucket&, const CountBucket&) = default;
};

struct DatasetConfig {
  std::vector<ShapeKind> shapes{kAllShapes.begin(), kAllShapes.end()};
  int images_per_shape = 50;
  std::vector<CountBucket> count_buckets{{1, 10}, {11, 20}, {21, 30}, {31, 40}, {41, 50}};
  int canvas_width = 640;
  int canvas_height = 640;
  Rgb object_fill_color{0, 0, 0};
  Rgb background_color{255, 255, 255};
  int object_radius = 18;
  int margin = 6;
  std::uint64_t seed = 20250101;
  std::string image_format = "png";

  /// Throws ConfigError on structural problems. Packing feasibility is left to
  /// plan_placements, which reports PlacementInfeasible.
  void validate() const;

  int max_count() const noexcept;
  int images_per_bucket() const noexcept {
    return images_per_shape / static_cast<int>(count_buckets.size());
  }
  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

void to_json(nlohmann::json& j, const DatasetConfig& config);
void from_json(const nlohmann::json& j, DatasetConfig& config);

/// Integer pixel coordinates of a glyph center.
struct Placement {
  int x = 0;
  int y = 0;
  friend bool operator==(const Placement&, const Placement&) = default;
};

class ImageSpec {
 public:
  /// Rejects count < 1 and placement lists whose length differs from count.
  ImageSpec(ShapeKind shape, int count, std::vector<Placement> placements, std::uint64_t seed);

  ShapeKind shape() const noexcept { return shape_; }
  int count() const noexcept { return count_; }
  const std::vector<Placement>& placements() const noexcept { return placements_; }
  std::uint64_t seed() const noexcept { return seed_; }

 private:
  ShapeKind shape_;
  int count_;
  std::vector<Placement> placements_;
  std::uint64_t seed_;
};

/// Seed used for all images of a given count: shared across shapes so that
/// objects sit at the same locations regardless of glyph.
std::uint64_t placement_seed(std::uint64_t dataset_seed, int count) noexcept;

/// Seeded rejection sampling with a budget of kPlacementAttemptBudget draws.
/// Pairwise center distance is at least 2 * radius + margin and every glyph
/// keeps `margin` pixels of clearance from the canvas edge.
std::vector<Placement> plan_placements(int count, const DatasetConfig& config, std::uint64_t seed);

inline constexpr int kPlacementAttemptBudget = 10'000;

/// Pixel offsets (relative to the glyph center pixel) covered by one glyph of
/// the given shape and radius. Always a single 8-connected component.
std::vector<Placement> glyph_stencil(ShapeKind shape, int radius);

Image rasterize(const ImageSpec& spec, const DatasetConfig& config);
/// Lossless, byte-deterministic encoding of rasterize().
Bytes render_image(const ImageSpec& spec, const DatasetConfig& config);

struct ManifestEntry {
  std::string image_path;  // relative to the manifest
  ShapeKind shape = ShapeKind::circle;
  int ground_truth_count = 0;
  int bucket_index = 0;
  std::uint64_t seed = 0;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

inline constexpr int kManifestSchemaVersion = 1;

struct DatasetManifest {
  int schema_version = kManifestSchemaVersion;
  DatasetConfig config;
  std::vector<ManifestEntry> entries;
  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

void to_json(nlohmann::json& j, const DatasetManifest& manifest);

/// Ground-truth counts for one shape, in image-index order.
std::vector<int> draw_counts(const DatasetConfig& config, ShapeKind shape);

/// Writes every image plus `manifest.json` into out_dir and returns the
/// manifest. Errors carry the offending file name.
DatasetManifest generate_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);

std::string image_file_name(ShapeKind shape, int index, int count, const std::string& ext);

}  // namespace vlmprobe
