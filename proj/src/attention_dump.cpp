#include "vlmprobe/attention_dump.hpp"

#include <bit>
#include <cmath>

#include <fmt/format.h>

#include "vlmprobe/errors.hpp"

namespace vlmprobe {

std::string_view to_string(AttentionMode mode) noexcept {
  switch (mode) {
    case AttentionMode::none: return "none";
    case AttentionMode::head_averaged: return "head_averaged";
    case AttentionMode::full: return "full";
  }
  return "?";
}

std::optional<AttentionMode> parse_attention_mode(std::string_view name) noexcept {
  if (name == "none") return AttentionMode::none;
  if (name == "head_averaged") return AttentionMode::head_averaged;
  if (name == "full") return AttentionMode::full;
  return std::nullopt;
}

void RegionBoundaries::validate() const {
  if (n_vision < 0) throw SchemaError(fmt::format("n_vision must be >= 0 (got {})", n_vision));
  if (n_prompt < 1) throw SchemaError(fmt::format("n_prompt must be >= 1 (got {})", n_prompt));
  if (generated < 1) throw SchemaError(fmt::format("G must be >= 1 (got {})", generated));
  if (input_len != n_vision + n_prompt) {
    throw SchemaError(fmt::format("S = {} but n_vision + n_prompt = {}", input_len, n_vision + n_prompt));
  }
}

std::size_t AttentionDump::total_weights() const noexcept {
  const auto g = static_cast<std::size_t>(generated);
  const auto per_head = g * static_cast<std::size_t>(input_len) + g * (g - 1) / 2;
  return static_cast<std::size_t>(num_layers) * num_heads * per_head;
}

void AttentionDump::validate() const {
  if (mode == AttentionMode::none) throw SchemaError("attention dump cannot have mode 'none'");
  if (num_layers < 1 || num_heads < 1) {
    throw DimensionMismatch(fmt::format("dump declares L={} H={}", num_layers, num_heads));
  }
  if (mode == AttentionMode::head_averaged && num_heads != 1) {
    throw DimensionMismatch(fmt::format("head_averaged dump must have H=1 (got {})", num_heads));
  }
  if (input_len < 1 || generated < 1) {
    throw DimensionMismatch(fmt::format("dump declares S={} G={}", input_len, generated));
  }
  if (tokens.size() != static_cast<std::size_t>(generated)) {
    throw DimensionMismatch(fmt::format("dump has {} token blocks, expected G={}", tokens.size(), generated));
  }
  for (int g = 1; g <= generated; ++g) {
    const auto& block = tokens[static_cast<std::size_t>(g - 1)];
    if (block.size() != token_size(g)) {
      throw DimensionMismatch(fmt::format("token g={}: expected [{}][{}][{}] = {} weights, got {}", g, num_layers,
                                          num_heads, context_len(g), token_size(g), block.size()));
    }
    for (float w : block) {
      if (!std::isfinite(w) || w < 0.0f) {
        throw SchemaError(fmt::format("token g={}: attention weight {} is negative or non-finite", g, w));
      }
    }
  }
}

void AttentionDump::validate_against(const RegionBoundaries& b) const {
  if (input_len != b.input_len || generated != b.generated) {
    throw DimensionMismatch(
        fmt::format("dump has S={} G={}, boundaries declare S={} G={}", input_len, generated, b.input_len, b.generated));
  }
  validate();
}

namespace {

class Writer {
 public:
  explicit Writer(Bytes& out) : out_(out) {}
  template <typename T>
  void le(T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }

 private:
  Bytes& out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  template <typename T>
  T le() {
    if (pos_ + sizeof(T) > in_.size()) throw SchemaError("attention dump header is truncated");
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(T{in_[pos_ + i]} << (8 * i));
    pos_ += sizeof(T);
    return value;
  }
  std::size_t remaining() const noexcept { return in_.size() - pos_; }
  std::size_t pos() const noexcept { return pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::uint8_t mode_code(AttentionMode mode) { return mode == AttentionMode::full ? 2 : 1; }

}  // namespace

Bytes encode_dump(const AttentionDump& dump) {
  dump.validate();
  Bytes out;
  out.reserve(kDumpHeaderSize + 4 * dump.total_weights());
  out.insert(out.end(), {'V', 'L', 'M', 'A'});
  Writer w(out);
  w.le<std::uint16_t>(kDumpVersion);
  w.le<std::uint8_t>(mode_code(dump.mode));
  w.le<std::uint16_t>(static_cast<std::uint16_t>(dump.num_layers));
  w.le<std::uint16_t>(static_cast<std::uint16_t>(dump.num_heads));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(dump.input_len));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(dump.generated));
  for (const auto& block : dump.tokens) {
    for (float f : block) w.le<std::uint32_t>(std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

AttentionDump decode_dump(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kDumpHeaderSize || bytes[0] != 'V' || bytes[1] != 'L' || bytes[2] != 'M' || bytes[3] != 'A') {
    throw SchemaError("attention dump: missing VLMA magic");
  }
  Reader r(bytes.subspan(4));
  const auto version = r.le<std::uint16_t>();
  if (version != kDumpVersion) throw SchemaError(fmt::format("attention dump: unsupported version {}", version));
  AttentionDump dump;
  switch (r.le<std::uint8_t>()) {
    case 1: dump.mode = AttentionMode::head_averaged; break;
    case 2: dump.mode = AttentionMode::full; break;
    default: throw SchemaError("attention dump: unknown mode byte");
  }
  dump.num_layers = r.le<std::uint16_t>();
  dump.num_heads = r.le<std::uint16_t>();
  dump.input_len = static_cast<int>(r.le<std::uint32_t>());
  dump.generated = static_cast<int>(r.le<std::uint32_t>());
  if (dump.num_layers < 1 || dump.num_heads < 1 || dump.input_len < 1 || dump.generated < 1) {
    throw DimensionMismatch(fmt::format("attention dump header declares L={} H={} S={} G={}", dump.num_layers,
                                        dump.num_heads, dump.input_len, dump.generated));
  }

  const auto expected = dump.total_weights();
  if (r.remaining() != 4 * expected) {
    // Locate the first token whose block would overrun for a useful message.
    std::size_t consumed = 0;
    int bad_g = dump.generated;
    for (int g = 1; g <= dump.generated; ++g) {
      consumed += dump.token_size(g);
      if (4 * consumed > r.remaining()) {
        bad_g = g;
        break;
      }
    }
    throw DimensionMismatch(fmt::format("attention dump payload holds {} bytes, expected {} ({} weights); first "
                                        "inconsistent token g={}",
                                        r.remaining(), 4 * expected, expected, bad_g));
  }

  Reader body(bytes.subspan(kDumpHeaderSize));
  dump.tokens.resize(static_cast<std::size_t>(dump.generated));
  for (int g = 1; g <= dump.generated; ++g) {
    auto& block = dump.tokens[static_cast<std::size_t>(g - 1)];
    block.resize(dump.token_size(g));
    for (auto& f : block) f = std::bit_cast<float>(body.le<std::uint32_t>());
  }
  dump.validate();
  return dump;
}

AttentionDump read_dump(const std::filesystem::path& path) { return decode_dump(read_file(path)); }

void write_dump(const std::filesystem::path& path, const AttentionDump& dump) {
  write_file_atomic(path, encode_dump(dump));
}

}  // namespace vlmprobe
