#include "vlmprobe/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <deque>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "vlmprobe/errors.hpp"

namespace vlmprobe {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

int DatasetConfig::max_count() const noexcept {
  int m = 0;
  for (const auto& b : count_buckets) m = std::max(m, b.hi);
  return m;
}

void DatasetConfig::validate() const {
  if (shapes.empty()) throw ConfigError("dataset config lists no shapes");
  if (std::set<ShapeKind>(shapes.begin(), shapes.end()).size() != shapes.size()) {
    throw ConfigError("dataset config lists a shape twice");
  }
  if (images_per_shape <= 0) throw ConfigError("images_per_shape must be positive");
  if (count_buckets.empty()) throw ConfigError("count_buckets is empty");
  if (images_per_shape % static_cast<int>(count_buckets.size()) != 0) {
    throw ConfigError(fmt::format("images_per_shape ({}) is not divisible by the number of buckets ({})",
                                  images_per_shape, count_buckets.size()));
  }
  for (std::size_t i = 0; i < count_buckets.size(); ++i) {
    const auto& b = count_buckets[i];
    if (b.lo < 1 || b.hi < b.lo) throw ConfigError(fmt::format("bucket [{}, {}] is invalid", b.lo, b.hi));
    if (i > 0 && b.lo <= count_buckets[i - 1].hi) {
      throw ConfigError("count_buckets must be disjoint and ascending");
    }
  }
  if (canvas_width <= 0 || canvas_height <= 0) throw ConfigError("canvas dimensions must be positive");
  if (object_radius <= 0) throw ConfigError("object_radius must be positive");
  if (margin < 0) throw ConfigError("margin must be non-negative");
  if (image_format != "png") throw ConfigError(fmt::format("unsupported image_format '{}'", image_format));
  if (object_fill_color == background_color) throw ConfigError("object and background colors are identical");
}

namespace {

json rgb_json(Rgb c) { return json::array({c.r, c.g, c.b}); }

Rgb rgb_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("color must be an [r, g, b] array");
  return {j[0].get<std::uint8_t>(), j[1].get<std::uint8_t>(), j[2].get<std::uint8_t>()};
}

}  // namespace

void to_json(json& j, const DatasetConfig& c) {
  json shapes = json::array();
  for (auto s : c.shapes) shapes.push_back(to_string(s));
  json buckets = json::array();
  for (const auto& b : c.count_buckets) buckets.push_back({b.lo, b.hi});
  j = json{{"shapes", shapes},
           {"images_per_shape", c.images_per_shape},
           {"count_buckets", buckets},
           {"canvas_width", c.canvas_width},
           {"canvas_height", c.canvas_height},
           {"object_fill_color", rgb_json(c.object_fill_color)},
           {"background_color", rgb_json(c.background_color)},
           {"object_radius", c.object_radius},
           {"margin", c.margin},
           {"seed", c.seed},
           {"image_format", c.image_format}};
}

void from_json(const json& j, DatasetConfig& c) {
  if (!j.is_object()) throw ConfigError("dataset config must be a JSON object");
  try {
    if (j.contains("shapes")) {
      c.shapes.clear();
      for (const auto& s : j.at("shapes")) {
        auto shape = parse_shape(s.get<std::string>());
        if (!shape) throw ConfigError(fmt::format("unknown shape '{}'", s.get<std::string>()));
        c.shapes.push_back(*shape);
      }
    }
    if (j.contains("count_buckets")) {
      c.count_buckets.clear();
      for (const auto& b : j.at("count_buckets")) {
        if (!b.is_array() || b.size() != 2) throw ConfigError("count bucket must be [lo, hi]");
        c.count_buckets.push_back({b[0].get<int>(), b[1].get<int>()});
      }
    }
    c.images_per_shape = j.value("images_per_shape", c.images_per_shape);
    c.canvas_width = j.value("canvas_width", c.canvas_width);
    c.canvas_height = j.value("canvas_height", c.canvas_height);
    if (j.contains("object_fill_color")) c.object_fill_color = rgb_from(j["object_fill_color"]);
    if (j.contains("background_color")) c.background_color = rgb_from(j["background_color"]);
    c.object_radius = j.value("object_radius", c.object_radius);
    c.margin = j.value("margin", c.margin);
    c.seed = j.value("seed", c.seed);
    c.image_format = j.value("image_format", c.image_format);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("dataset config: {}", e.what()));
  }
}

// ---------------------------------------------------------------------------
// Placement

ImageSpec::ImageSpec(ShapeKind shape, int count, std::vector<Placement> placements, std::uint64_t seed)
    : shape_(shape), count_(count), placements_(std::move(placements)), seed_(seed) {
  if (count < 1) throw ConfigError(fmt::format("image count must be >= 1 (got {})", count));
  if (placements_.size() != static_cast<std::size_t>(count)) {
    throw ConfigError(fmt::format("{} placements for count {}", placements_.size(), count));
  }
}

std::uint64_t placement_seed(std::uint64_t dataset_seed, int count) noexcept {
  return mix64(mix64(dataset_seed) ^ static_cast<std::uint64_t>(count));
}

std::vector<Placement> plan_placements(int count, const DatasetConfig& config, std::uint64_t seed) {
  if (count < 1) throw ConfigError("placement count must be >= 1");
  const int inset = config.object_radius + config.margin;
  const int span_x = config.canvas_width - 2 * inset;
  const int span_y = config.canvas_height - 2 * inset;
  if (span_x <= 0 || span_y <= 0) {
    throw PlacementInfeasible(fmt::format("radius {} with margin {} leaves no room on a {}x{} canvas",
                                          config.object_radius, config.margin, config.canvas_width,
                                          config.canvas_height));
  }
  const double min_dist = 2.0 * config.object_radius + config.margin;

  // Discs of diameter min_dist cannot exceed hexagonal packing density.
  const double rho = min_dist / 2.0;
  const double packable = std::numbers::pi / (2.0 * std::sqrt(3.0)) * (span_x + 2 * rho) * (span_y + 2 * rho);
  if (count * std::numbers::pi * rho * rho > packable) {
    throw PlacementInfeasible(fmt::format("{} objects of radius {} cannot fit on a {}x{} canvas", count,
                                          config.object_radius, config.canvas_width, config.canvas_height));
  }

  auto rng = CounterRng::keyed(seed, 0x706c6163ULL);
  std::vector<Placement> out;
  out.reserve(static_cast<std::size_t>(count));
  const double min_dist_sq = min_dist * min_dist;
  int attempts = 0;
  while (static_cast<int>(out.size()) < count) {
    if (attempts++ >= kPlacementAttemptBudget) {
      throw PlacementInfeasible(fmt::format("placed {} of {} objects within {} attempts (radius {}, seed {})",
                                            out.size(), count, kPlacementAttemptBudget, config.object_radius,
                                            seed));
    }
    const Placement p{inset + static_cast<int>(rng.below(static_cast<std::uint64_t>(span_x))),
                      inset + static_cast<int>(rng.below(static_cast<std::uint64_t>(span_y)))};
    const bool clear = std::all_of(out.begin(), out.end(), [&](const Placement& q) {
      const double dx = p.x - q.x, dy = p.y - q.y;
      return dx * dx + dy * dy >= min_dist_sq;
    });
    if (clear) out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Glyphs

namespace {

struct Vec2 {
  double x, y;
};

std::vector<Vec2> regular_vertices(int n, double radius, double inner_ratio = 1.0, int alternate = 1) {
  std::vector<Vec2> v;
  const int total = n * alternate;
  for (int k = 0; k < total; ++k) {
    const double angle = -std::numbers::pi / 2 + 2 * std::numbers::pi * k / total;
    const double r = (alternate == 2 && k % 2 == 1) ? radius * inner_ratio : radius;
    v.push_back({r * std::cos(angle), r * std::sin(angle)});
  }
  return v;
}

bool polygon_contains(const std::vector<Vec2>& poly, double x, double y) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) inside = !inside;
  }
  return inside;
}

std::vector<Vec2> glyph_outline(ShapeKind shape, double r) {
  switch (shape) {
    case ShapeKind::triangle: return regular_vertices(3, r);
    case ShapeKind::polygon: return regular_vertices(5, r);
    case ShapeKind::star: return regular_vertices(5, r, 0.5, 2);
    case ShapeKind::rectangle: {
      // 4:3 aspect with its diagonal equal to the glyph diameter.
      const double hw = 0.8 * r, hh = 0.6 * r;
      return {{-hw, -hh}, {hw, -hh}, {hw, hh}, {-hw, hh}};
    }
    case ShapeKind::circle: break;
  }
  return {};
}

std::vector<Placement> largest_component(const std::vector<Placement>& cells, int radius) {
  const int side = 2 * radius + 1;
  std::vector<int> label(static_cast<std::size_t>(side) * side, -1);
  auto idx = [&](int dx, int dy) { return static_cast<std::size_t>(dy + radius) * side + (dx + radius); };
  for (const auto& c : cells) label[idx(c.x, c.y)] = 0;

  std::vector<std::vector<Placement>> components;
  for (const auto& seed : cells) {
    if (label[idx(seed.x, seed.y)] != 0) continue;
    std::vector<Placement> comp;
    std::deque<Placement> queue{seed};
    label[idx(seed.x, seed.y)] = 1;
    while (!queue.empty()) {
      const auto p = queue.front();
      queue.pop_front();
      comp.push_back(p);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = p.x + dx, ny = p.y + dy;
          if (nx < -radius || nx > radius || ny < -radius || ny > radius) continue;
          if (label[idx(nx, ny)] == 0) {
            label[idx(nx, ny)] = 1;
            queue.push_back({nx, ny});
          }
        }
      }
    }
    components.push_back(std::move(comp));
  }
  auto best = std::max_element(components.begin(), components.end(),
                               [](const auto& a, const auto& b) { return a.size() < b.size(); });
  auto out = *best;
  std::sort(out.begin(), out.end(), [](const Placement& a, const Placement& b) {
    return a.y != b.y ? a.y < b.y : a.x < b.x;
  });
  return out;
}

}  // namespace

std::vector<Placement> glyph_stencil(ShapeKind shape, int radius) {
  const double r = radius;
  const auto outline = glyph_outline(shape, r);
  std::vector<Placement> cells;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const bool in = shape == ShapeKind::circle ? dx * dx + dy * dy <= radius * radius
                                                 : polygon_contains(outline, dx, dy);
      if (in) cells.push_back({dx, dy});
    }
  }
  // Sampling at pixel centers can leave single pixels stranded near the sharp
  // star tips; drop them so each glyph is exactly one blob.
  return largest_component(cells, radius);
}

Image rasterize(const ImageSpec& spec, const DatasetConfig& config) {
  const int r = config.object_radius;
  for (const auto& p : spec.placements()) {
    if (p.x - r < 0 || p.y - r < 0 || p.x + r >= config.canvas_width || p.y + r >= config.canvas_height) {
      throw RenderBoundsError(fmt::format("{} at ({}, {}) with radius {} clips the {}x{} canvas",
                                          to_string(spec.shape()), p.x, p.y, r, config.canvas_width,
                                          config.canvas_height));
    }
  }
  Image image(config.canvas_width, config.canvas_height, config.background_color);
  const auto stencil = glyph_stencil(spec.shape(), r);
  for (const auto& p : spec.placements()) {
    for (const auto& o : stencil) image.set(p.x + o.x, p.y + o.y, config.object_fill_color);
  }
  return image;
}

Bytes render_image(const ImageSpec& spec, const DatasetConfig& config) {
  return encode_png(rasterize(spec, config));
}

// ---------------------------------------------------------------------------
// Dataset

std::string image_file_name(ShapeKind shape, int index, int count, const std::string& ext) {
  return fmt::format("{}_{:03}_{:02}.{}", to_string(shape), index, count, ext);
}

std::vector<int> draw_counts(const DatasetConfig& config, ShapeKind shape) {
  const auto shape_index = static_cast<std::uint64_t>(shape);
  const int quota = config.images_per_bucket();
  std::vector<int> counts;
  for (std::size_t b = 0; b < config.count_buckets.size(); ++b) {
    const auto& bucket = config.count_buckets[b];
    auto rng = CounterRng::keyed(config.seed, shape_index, b);
    if (bucket.width() >= quota) {
      std::vector<int> pool;
      for (int c = bucket.lo; c <= bucket.hi; ++c) pool.push_back(c);
      for (int i = 0; i < quota; ++i) {
        const auto j = static_cast<std::size_t>(i) + rng.below(pool.size() - static_cast<std::size_t>(i));
        std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
        counts.push_back(pool[static_cast<std::size_t>(i)]);
      }
    } else {
      for (int i = 0; i < quota; ++i) {
        counts.push_back(bucket.lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(bucket.width()))));
      }
    }
  }
  return counts;
}

void to_json(json& j, const DatasetManifest& m) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"image_path", e.image_path},
                       {"shape", to_string(e.shape)},
                       {"ground_truth_count", e.ground_truth_count},
                       {"bucket_index", e.bucket_index},
                       {"seed", e.seed}});
  }
  j = json{{"schema_version", m.schema_version},
           {"task_class", "synthetic"},
           {"source_note", "generated synthetic shape-counting set"},
           {"config", m.config},
           {"entries", entries}};
}

DatasetManifest generate_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", out_dir.string(), ec.message()));

  DatasetManifest manifest;
  manifest.config = config;
  const int quota = config.images_per_bucket();
  for (auto shape : config.shapes) {
    const auto counts = draw_counts(config, shape);
    for (std::size_t i = 0; i < counts.size(); ++i) {
      const int count = counts[i];
      manifest.entries.push_back({image_file_name(shape, static_cast<int>(i), count, config.image_format), shape,
                                  count, static_cast<int>(i) / quota, placement_seed(config.seed, count)});
    }
  }

  // Placements depend only on (count, seed); plan each once and share.
  std::map<int, std::vector<Placement>> placements;
  for (const auto& e : manifest.entries) {
    if (placements.contains(e.ground_truth_count)) continue;
    try {
      placements[e.ground_truth_count] = plan_placements(e.ground_truth_count, config, e.seed);
    } catch (const Error& err) {
      throw PlacementInfeasible(fmt::format("{}: {}", e.image_path, err.what()));
    }
  }

  std::mutex error_mutex;
  std::optional<std::pair<std::string, std::string>> failure;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < manifest.entries.size(); i = next++) {
      const auto& e = manifest.entries[i];
      try {
        const ImageSpec spec(e.shape, e.ground_truth_count, placements.at(e.ground_truth_count), e.seed);
        write_file_atomic(out_dir / e.image_path, render_image(spec, config));
      } catch (const Error& err) {
        std::lock_guard lock(error_mutex);
        if (!failure) failure.emplace(err.kind(), fmt::format("{}: {}", e.image_path, err.what()));
      }
    }
  };
  const unsigned n_threads = std::clamp(std::thread::hardware_concurrency(), 1u, 8u);
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
  }
  if (failure) {
    if (failure->first == "RenderBoundsError") throw RenderBoundsError(failure->second);
    throw IoError(failure->second);
  }

  write_file_atomic(out_dir / "manifest.json", json(manifest).dump(2) + "\n");
  return manifest;
}

}  // namespace vlmprobe
