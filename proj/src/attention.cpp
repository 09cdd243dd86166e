#include "vlmprobe/attention.hpp"

#include <gmpxx.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>

#include <fmt/format.h>

#include "vlmprobe/errors.hpp"

namespace vlmprobe {

namespace {

constexpr double kZeroMass = 1e-12;

/// Exact sum of non-negative float32 values. Each value is m * 2^(e - 150)
/// with a 24-bit integer m, so bucketing integer mantissas by exponent loses
/// nothing; the buckets are folded into one big integer on demand.
class ExactFloatSum {
 public:
  void add(float w) noexcept {
    const auto bits = std::bit_cast<std::uint32_t>(w);
    const auto exponent = static_cast<int>((bits >> 23) & 0xff);
    const std::uint32_t mantissa = bits & 0x7fffff;
    const int bucket = exponent == 0 ? 1 : exponent;  // subnormals share the e=1 unit
    units_[static_cast<std::size_t>(bucket)] += exponent == 0 ? mantissa : (mantissa | 0x800000);
  }

  /// Value in units of 2^-149.
  mpz_class value() const {
    mpz_class acc = 0;
    for (int e = 254; e >= 1; --e) {
      acc <<= 1;
      acc += static_cast<unsigned long>(units_[static_cast<std::size_t>(e)]);
    }
    return acc;
  }

 private:
  std::array<std::uint64_t, 256> units_{};
};

double share(const mpz_class& part, const mpz_class& total) {
  if (part == 0) return 0.0;
  mpq_class q(part, total);
  q.canonicalize();
  return q.get_d();
}

double neumaier_sum(std::span<const double> xs) {
  double sum = 0.0, c = 0.0;
  for (double x : xs) {
    const double t = sum + x;
    c += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  }
  return sum + c;
}

void check_token(const AttentionDump& dump, int g) {
  if (g < 1 || g > dump.generated) {
    throw DimensionMismatch(fmt::format("token index g={} outside 1..{}", g, dump.generated));
  }
}

}  // namespace

std::vector<double> reduce_token(const AttentionDump& dump, int g) {
  check_token(dump, g);
  const auto& block = dump.tokens[static_cast<std::size_t>(g - 1)];
  if (block.size() != dump.token_size(g)) {
    throw DimensionMismatch(fmt::format("token g={} holds {} weights, expected {}", g, block.size(), dump.token_size(g)));
  }
  const auto len = dump.context_len(g);
  std::vector<double> reduced(len, 0.0), layer(len);
  for (int l = 0; l < dump.num_layers; ++l) {
    std::fill(layer.begin(), layer.end(), 0.0);
    for (int h = 0; h < dump.num_heads; ++h) {
      const auto row = dump.row(g, l, h);
      for (std::size_t i = 0; i < len; ++i) layer[i] += row[i];
    }
    for (std::size_t i = 0; i < len; ++i) reduced[i] += layer[i] / dump.num_heads;
  }
  for (auto& v : reduced) v /= dump.num_layers;
  return reduced;
}

RegionTriple partition_proportions(std::span<const double> reduced, const RegionBoundaries& b, int g) {
  b.validate();
  const auto expected = static_cast<std::size_t>(b.input_len + g - 1);
  if (g < 1 || reduced.size() != expected) {
    throw DimensionMismatch(fmt::format("reduced vector for g={} has length {}, expected S+g-1 = {}", g,
                                        reduced.size(), expected));
  }
  const auto nv = static_cast<std::size_t>(b.n_vision);
  const auto s = static_cast<std::size_t>(b.input_len);
  const double image = neumaier_sum(reduced.subspan(0, nv));
  const double prompt = neumaier_sum(reduced.subspan(nv, s - nv));
  const double generated = neumaier_sum(reduced.subspan(s));
  const double total = neumaier_sum(reduced);
  if (!(total >= kZeroMass)) {
    throw ZeroMassError(fmt::format("token g={} carries total attention {:.3g}", g, total));
  }
  return {image / total, prompt / total, g == 1 ? 0.0 : generated / total};
}

std::vector<RegionTriple> token_proportions(const AttentionDump& dump, const RegionBoundaries& b) {
  b.validate();
  dump.validate_against(b);
  const auto nv = static_cast<std::size_t>(b.n_vision);
  const auto s = static_cast<std::size_t>(b.input_len);
  const double rows_per_token = static_cast<double>(dump.num_layers) * dump.num_heads;

  std::vector<RegionTriple> out;
  out.reserve(static_cast<std::size_t>(dump.generated));
  for (int g = 1; g <= dump.generated; ++g) {
    ExactFloatSum image, prompt, generated;
    for (int l = 0; l < dump.num_layers; ++l) {
      for (int h = 0; h < dump.num_heads; ++h) {
        const auto row = dump.row(g, l, h);
        for (std::size_t i = 0; i < nv; ++i) image.add(row[i]);
        for (std::size_t i = nv; i < s; ++i) prompt.add(row[i]);
        for (std::size_t i = s; i < row.size(); ++i) generated.add(row[i]);
      }
    }
    const mpz_class vi = image.value(), vp = prompt.value(), vg = generated.value();
    const mpz_class total = vi + vp + vg;
    const double mass = std::ldexp(total.get_d(), -149) / rows_per_token;
    if (!(mass >= kZeroMass)) {
      throw ZeroMassError(fmt::format("token g={} carries total attention {:.3g}", g, mass));
    }
    out.push_back({share(vi, total), share(vp, total), share(vg, total)});
  }
  return out;
}

AttentionProportions aggregate_trial(const AttentionDump& dump, const RegionBoundaries& b) {
  const auto triples = token_proportions(dump, b);
  double image = 0.0, prompt = 0.0, generated = 0.0;
  for (const auto& t : triples) {
    image += t.image;
    prompt += t.prompt;
    generated += t.generated;
  }
  const double n = static_cast<double>(triples.size());
  image /= n;
  prompt /= n;
  generated /= n;
  const double total = image + prompt + generated;

  double row_sums = 0.0;
  std::size_t rows = 0;
  for (int g = 1; g <= dump.generated; ++g) {
    for (int l = 0; l < dump.num_layers; ++l) {
      for (int h = 0; h < dump.num_heads; ++h) {
        double sum = 0.0;
        for (float w : dump.row(g, l, h)) sum += w;
        row_sums += sum;
        ++rows;
      }
    }
  }
  return {image / total, prompt / total, generated / total, row_sums / static_cast<double>(rows),
          static_cast<int>(triples.size())};
}

SummaryStats summarize(std::span<const double> values) {
  if (values.empty()) throw EmptyGroup("cannot summarize an empty group");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  auto quantile = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return frac == 0.0 ? v[lo] : v[lo] + frac * (v[hi] - v[lo]);
  };
  SummaryStats s;
  s.n = v.size();
  s.mean = neumaier_sum(v) / static_cast<double>(v.size());
  s.median = quantile(0.5);
  s.q1 = quantile(0.25);
  s.q3 = quantile(0.75);
  s.min = v.front();
  s.max = v.back();
  return s;
}

RegionSummary aggregate_group(std::span<const AttentionProportions> trials) {
  if (trials.empty()) throw EmptyGroup("attention group has no trials");
  std::vector<double> image, prompt, generated;
  for (const auto& t : trials) {
    image.push_back(t.image);
    prompt.push_back(t.prompt);
    generated.push_back(t.generated);
  }
  return {summarize(image), summarize(prompt), summarize(generated)};
}

}  // namespace vlmprobe
