#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vlmprobe {

using Bytes = std::vector<std::uint8_t>;

std::string sha256_hex(std::span<const std::uint8_t> data);
std::string sha256_hex(std::string_view data);

std::string base64_encode(std::span<const std::uint8_t> data);
/// Throws SchemaError on malformed input.
Bytes base64_decode(std::string_view text);

Bytes read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames, so readers never observe a
/// partially written file.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> data);
void write_file_atomic(const std::filesystem::path& path, std::string_view data);

/// SplitMix64 finalizer; the building block of the counter-based generators.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based generator: output i is mix64(key ^ mix64(i)). Streams keyed on
/// different tuples never share state, which keeps generation order-free.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) noexcept : key_(key) {}

  template <typename... Parts>
  static CounterRng keyed(std::uint64_t first, Parts... rest) noexcept {
    std::uint64_t k = mix64(first);
    ((k = mix64(k ^ static_cast<std::uint64_t>(rest))), ...);
    return CounterRng(k);
  }

  std::uint64_t next() noexcept { return mix64(key_ ^ mix64(counter_++)); }

  /// Uniform in [0, bound) without modulo bias.
  std::uint64_t below(std::uint64_t bound) noexcept;

  /// Uniform double in [0, 1) with 53 random bits.
  double unit() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Parses the 64-bit prefix of a hex digest into a key for CounterRng.
std::uint64_t key_from_hex(std::string_view hex);

}  // namespace vlmprobe
