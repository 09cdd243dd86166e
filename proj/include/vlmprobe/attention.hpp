#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vlmprobe/attention_dump.hpp"

namespace vlmprobe {

/// Share of one attention vector falling on vision tokens, prompt tokens and
/// previously generated tokens.
struct RegionTriple {
  double image = 0.0;
  double prompt = 0.0;
  double generated = 0.0;

  double sum() const noexcept { return image + prompt + generated; }
  friend bool operator==(const RegionTriple&, const RegionTriple&) = default;
};

struct AttentionProportions {
  double image = 0.0;      // A_img
  double prompt = 0.0;     // A_prompt
  double generated = 0.0;  // A_gen_token
  double raw_row_sum_mean = 0.0;  // mean of per-(g, layer, head) row sums before normalization
  int tokens_used = 0;

  RegionTriple triple() const noexcept { return {image, prompt, generated}; }
  friend bool operator==(const AttentionProportions&, const AttentionProportions&) = default;
};

/// A_g[i] = mean over layers of the mean over heads of w[l][h][i], length
/// S + g - 1. Throws DimensionMismatch for g outside 1..G.
std::vector<double> reduce_token(const AttentionDump& dump, int g);

/// Region masses of a reduced vector divided by its total. Throws
/// DimensionMismatch when the length is not S + g - 1 and ZeroMassError when
/// the total is below 1e-12.
RegionTriple partition_proportions(std::span<const double> reduced, const RegionBoundaries& boundaries, int g);

/// Per-token triples computed from exact sums of the raw float32 weights. The
/// 1/(L*H) averaging factor cancels in the ratio, so each triple is the
/// correctly rounded share of the reduced vector and depends only on the
/// ratios between weights: scaling a dump by any factor that keeps the
/// weights exact leaves every bit unchanged.
std::vector<RegionTriple> token_proportions(const AttentionDump& dump, const RegionBoundaries& boundaries);

/// Unweighted mean of the per-token triples over g = 1..G, renormalized to sum
/// to one.
AttentionProportions aggregate_trial(const AttentionDump& dump, const RegionBoundaries& boundaries);

struct SummaryStats {
  std::size_t n = 0;
  double mean = 0.0;
  double median = 0.0;
  double q1 = 0.0;  // linear interpolation between order statistics
  double q3 = 0.0;
  double min = 0.0;
  double max = 0.0;
};

/// Throws EmptyGroup for an empty sample.
SummaryStats summarize(std::span<const double> values);

struct RegionSummary {
  SummaryStats image;
  SummaryStats prompt;
  SummaryStats generated;
};

/// Distribution summary of each region over the trials of one group.
RegionSummary aggregate_group(std::span<const AttentionProportions> trials);

}  // namespace vlmprobe
