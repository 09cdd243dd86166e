#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "vlmprobe/util.hpp"

namespace vlmprobe {

enum class AttentionMode { none, head_averaged, full };

std::string_view to_string(AttentionMode mode) noexcept;
std::optional<AttentionMode> parse_attention_mode(std::string_view name) noexcept;

/// Token layout declared by the backend. Positions [0, n_vision) are vision
/// tokens, [n_vision, S) prompt text (including special tokens), and
/// generated token g attends over S + g - 1 positions.
struct RegionBoundaries {
  int n_vision = 0;
  int n_prompt = 1;
  int input_len = 1;  // S
  int generated = 1;  // G

  /// Throws SchemaError when S != n_vision + n_prompt or a count is out of range.
  void validate() const;
  friend bool operator==(const RegionBoundaries&, const RegionBoundaries&) = default;
};

/// Per-generated-token attention weights. tokens[g - 1] holds a row-major
/// [layers][heads][S + g - 1] block of float32 weights.
struct AttentionDump {
  AttentionMode mode = AttentionMode::head_averaged;
  int num_layers = 1;
  int num_heads = 1;
  int input_len = 1;  // S
  int generated = 1;  // G
  std::vector<std::vector<float>> tokens;

  std::size_t context_len(int g) const noexcept { return static_cast<std::size_t>(input_len + g - 1); }
  std::size_t token_size(int g) const noexcept {
    return static_cast<std::size_t>(num_layers) * num_heads * context_len(g);
  }
  std::span<const float> row(int g, int layer, int head) const noexcept {
    const auto len = context_len(g);
    const auto offset = (static_cast<std::size_t>(layer) * num_heads + head) * len;
    return std::span<const float>(tokens[static_cast<std::size_t>(g - 1)]).subspan(offset, len);
  }
  std::size_t total_weights() const noexcept;

  /// Checks every token block against S + g - 1 and that all weights are
  /// finite and non-negative. Throws DimensionMismatch / SchemaError.
  void validate() const;
  /// validate() plus agreement of S and G with the declared boundaries.
  void validate_against(const RegionBoundaries& boundaries) const;

  friend bool operator==(const AttentionDump&, const AttentionDump&) = default;
};

/// Little-endian sidecar layout:
///   "VLMA" | version u16 | mode u8 | L u16 | H u16 | S u32 | G u32 |
///   G float32 blocks of [L][H][S + g - 1]
inline constexpr std::uint16_t kDumpVersion = 1;
inline constexpr std::size_t kDumpHeaderSize = 19;

Bytes encode_dump(const AttentionDump& dump);
/// Throws SchemaError on a bad header and DimensionMismatch when the payload
/// length disagrees with the header.
AttentionDump decode_dump(std::span<const std::uint8_t> bytes);

AttentionDump read_dump(const std::filesystem::path& path);
void write_dump(const std::filesystem::path& path, const AttentionDump& dump);

}  // namespace vlmprobe
