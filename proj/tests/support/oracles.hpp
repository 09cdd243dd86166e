#pragma once
// Independent reference implementations used to check the library. They are
// deliberately naive: straight loops, long double, no shared code paths.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "vlmprobe/attention_dump.hpp"
#include "vlmprobe/raster.hpp"

namespace oracle {

struct Triple {
  long double image = 0, prompt = 0, generated = 0;
};

/// A_g[i] = (1/L) sum_l (1/H) sum_h w[l][h][i], partitioned and normalized,
/// then averaged over g and renormalized.
inline std::vector<Triple> per_token(const vlmprobe::AttentionDump& d, const vlmprobe::RegionBoundaries& b) {
  std::vector<Triple> out;
  for (int g = 1; g <= d.generated; ++g) {
    const int len = b.input_len + g - 1;
    std::vector<long double> a(static_cast<std::size_t>(len), 0.0L);
    const auto& block = d.tokens[static_cast<std::size_t>(g - 1)];
    for (int l = 0; l < d.num_layers; ++l) {
      for (int h = 0; h < d.num_heads; ++h) {
        for (int i = 0; i < len; ++i) {
          const auto w = block[static_cast<std::size_t>((l * d.num_heads + h) * len + i)];
          a[static_cast<std::size_t>(i)] += static_cast<long double>(w) / d.num_heads / d.num_layers;
        }
      }
    }
    Triple t;
    long double total = 0;
    for (int i = 0; i < len; ++i) {
      total += a[static_cast<std::size_t>(i)];
      if (i < b.n_vision) {
        t.image += a[static_cast<std::size_t>(i)];
      } else if (i < b.input_len) {
        t.prompt += a[static_cast<std::size_t>(i)];
      } else {
        t.generated += a[static_cast<std::size_t>(i)];
      }
    }
    t.image /= total;
    t.prompt /= total;
    t.generated /= total;
    out.push_back(t);
  }
  return out;
}

inline Triple trial(const vlmprobe::AttentionDump& d, const vlmprobe::RegionBoundaries& b) {
  Triple m;
  const auto tokens = per_token(d, b);
  for (const auto& t : tokens) {
    m.image += t.image;
    m.prompt += t.prompt;
    m.generated += t.generated;
  }
  const long double s = m.image + m.prompt + m.generated;
  return {m.image / s, m.prompt / s, m.generated / s};
}

/// Random well-formed dump: positive weights, rows not necessarily summing to 1.
inline std::pair<vlmprobe::AttentionDump, vlmprobe::RegionBoundaries> random_dump(std::mt19937_64& rng, int max_l = 4,
                                                                                  int max_h = 4, int max_s = 32,
                                                                                  int max_g = 8) {
  std::uniform_int_distribution<int> dl(1, max_l), dh(1, max_h), ds(1, max_s), dg(1, max_g);
  std::uniform_real_distribution<float> dw(0.0f, 1.0f);
  vlmprobe::RegionBoundaries b;
  b.input_len = ds(rng);
  b.n_prompt = std::uniform_int_distribution<int>(1, b.input_len)(rng);
  b.n_vision = b.input_len - b.n_prompt;
  b.generated = dg(rng);
  vlmprobe::AttentionDump d;
  d.num_layers = dl(rng);
  d.num_heads = dh(rng);
  d.mode = d.num_heads == 1 && rng() % 2 ? vlmprobe::AttentionMode::head_averaged : vlmprobe::AttentionMode::full;
  d.input_len = b.input_len;
  d.generated = b.generated;
  for (int g = 1; g <= b.generated; ++g) {
    std::vector<float> block(static_cast<std::size_t>(d.num_layers * d.num_heads * (b.input_len + g - 1)));
    for (auto& w : block) w = dw(rng) + 1e-3f;
    d.tokens.push_back(std::move(block));
  }
  return {std::move(d), b};
}

struct Component {
  long pixels = 0;
  double cx = 0, cy = 0;
};

/// 8-connected foreground components by breadth-first flood fill.
inline std::vector<Component> components(const vlmprobe::Image& img, vlmprobe::Rgb background) {
  const int w = img.width(), h = img.height();
  std::vector<char> seen(static_cast<std::size_t>(w) * h, 0);
  std::vector<Component> out;
  std::vector<std::pair<int, int>> queue;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (seen[static_cast<std::size_t>(y) * w + x] || img.at(x, y) == background) continue;
      Component c;
      long double sx = 0, sy = 0;
      queue.assign(1, {x, y});
      seen[static_cast<std::size_t>(y) * w + x] = 1;
      for (std::size_t q = 0; q < queue.size(); ++q) {
        const auto [px, py] = queue[q];
        ++c.pixels;
        sx += px;
        sy += py;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = px + dx, ny = py + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            auto& s = seen[static_cast<std::size_t>(ny) * w + nx];
            if (s || img.at(nx, ny) == background) continue;
            s = 1;
            queue.push_back({nx, ny});
          }
        }
      }
      c.cx = static_cast<double>(sx / c.pixels);
      c.cy = static_cast<double>(sy / c.pixels);
      out.push_back(c);
    }
  }
  return out;
}

}  // namespace oracle

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "vlmprobe") {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(stamp) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};
