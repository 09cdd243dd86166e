#include <doctest.h>

#include <random>

#include "vlmprobe/attention.hpp"
#include "vlmprobe/errors.hpp"
#include "../support/oracles.hpp"

using namespace vlmprobe;

namespace {

AttentionDump dump_of(int layers, int heads, int s, std::vector<std::vector<float>> tokens) {
  AttentionDump d;
  d.mode = heads == 1 ? AttentionMode::head_averaged : AttentionMode::full;
  d.num_layers = layers;
  d.num_heads = heads;
  d.input_len = s;
  d.generated = static_cast<int>(tokens.size());
  d.tokens = std::move(tokens);
  return d;
}

void check_triple(const RegionTriple& t, double i, double p, double g) {
  CHECK(t.image == doctest::Approx(i).epsilon(1e-12));
  CHECK(t.prompt == doctest::Approx(p).epsilon(1e-12));
  CHECK(t.generated == doctest::Approx(g).epsilon(1e-12));
}

}  // namespace

TEST_SUITE("attention") {
  TEST_CASE("L=1 H=1 reduction is the row itself") {
    const auto d = dump_of(1, 1, 3, {{0.1f, 0.2f, 0.7f}});
    CHECK(reduce_token(d, 1) == std::vector<double>{0.1f, 0.2f, 0.7f});
  }

  TEST_CASE("two layers average elementwise") {
    const auto d = dump_of(2, 1, 2, {{0.2f, 0.8f, 0.6f, 0.4f}});
    const auto a = reduce_token(d, 1);
    CHECK(a[0] == doctest::Approx((0.2 + 0.6) / 2));
    CHECK(a[1] == doctest::Approx((0.8 + 0.4) / 2));
    CHECK_THROWS_AS(reduce_token(d, 2), DimensionMismatch);
    CHECK_THROWS_AS(reduce_token(d, 0), DimensionMismatch);
  }

  TEST_CASE("random dumps match the triple-loop oracle") {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 100; ++i) {
      const auto [d, b] = oracle::random_dump(rng);
      const auto tokens = oracle::per_token(d, b);
      for (int g = 1; g <= d.generated; ++g) {
        const auto a = reduce_token(d, g);
        const auto t = partition_proportions(a, b, g);
        CHECK(std::abs(t.image - static_cast<double>(tokens[static_cast<std::size_t>(g - 1)].image)) < 1e-12);
        const auto exact = token_proportions(d, b)[static_cast<std::size_t>(g - 1)];
        CHECK(std::abs(exact.prompt - static_cast<double>(tokens[static_cast<std::size_t>(g - 1)].prompt)) < 1e-12);
      }
      const auto want = oracle::trial(d, b);
      const auto got = aggregate_trial(d, b);
      CHECK(std::abs(got.image - static_cast<double>(want.image)) < 1e-12);
      CHECK(std::abs(got.generated - static_cast<double>(want.generated)) < 1e-12);
    }
  }

  TEST_CASE("partition examples") {
    const std::vector<double> four(4, 0.25), five(5, 0.2);
    check_triple(partition_proportions(four, {2, 2, 4, 2}, 1), 0.5, 0.5, 0.0);
    check_triple(partition_proportions(five, {2, 2, 4, 2}, 2), 0.4, 0.4, 0.2);
    const std::vector<double> onehot{0, 0, 0, 0, 0, 1};
    check_triple(partition_proportions(onehot, {2, 2, 4, 3}, 3), 0, 0, 1);
    CHECK(partition_proportions(four, {2, 2, 4, 1}, 1).generated == 0.0);
  }

  TEST_CASE("partition errors") {
    const std::vector<double> zeros(4, 0.0), four(4, 0.25);
    CHECK_THROWS_AS(partition_proportions(zeros, {2, 2, 4, 1}, 1), ZeroMassError);
    CHECK_THROWS_AS(partition_proportions(four, {2, 2, 4, 2}, 2), DimensionMismatch);
    const auto d = dump_of(1, 1, 2, {{0.0f, 0.0f}});
    CHECK_THROWS_AS(aggregate_trial(d, {1, 1, 2, 1}), ZeroMassError);
  }

  TEST_CASE("trial aggregation examples") {
    const auto single = dump_of(1, 1, 4, {{0.1f, 0.2f, 0.3f, 0.4f}});
    const auto p1 = aggregate_trial(single, {2, 2, 4, 1});
    CHECK(p1.image == doctest::Approx(0.3));
    CHECK(p1.generated == 0.0);
    CHECK(p1.tokens_used == 1);

    const auto two = dump_of(1, 1, 4, {{0.25f, 0.25f, 0.25f, 0.25f}, {0.2f, 0.2f, 0.2f, 0.2f, 0.2f}});
    const auto p2 = aggregate_trial(two, {2, 2, 4, 2});
    CHECK(p2.image == doctest::Approx(0.45).epsilon(1e-12));
    CHECK(p2.prompt == doctest::Approx(0.45).epsilon(1e-12));
    CHECK(p2.generated == doctest::Approx(0.10).epsilon(1e-12));
    CHECK(p2.raw_row_sum_mean == doctest::Approx(1.0).epsilon(1e-6));
  }

  TEST_CASE("unnormalized rows are normalized and reported") {
    const auto d = dump_of(1, 1, 2, {{2.0f, 2.0f}});
    const auto p = aggregate_trial(d, {1, 1, 2, 1});
    CHECK(p.image == 0.5);
    CHECK(p.raw_row_sum_mean == 4.0);
  }

  TEST_CASE("boundary disagreement") {
    const auto d = dump_of(1, 1, 4, {{0.25f, 0.25f, 0.25f, 0.25f}});
    CHECK_THROWS_AS(aggregate_trial(d, {2, 3, 5, 1}), DimensionMismatch);
  }

  TEST_CASE("head_averaged equals full for the same weights") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> pow2(-20, 0);
    // weights that are exact binary fractions so the head mean is exact in float32
    const int heads = 4, s = 6;
    std::vector<std::vector<float>> full_tokens, avg_tokens;
    for (int g = 1; g <= 3; ++g) {
      const int len = s + g - 1;
      std::vector<float> full(static_cast<std::size_t>(heads * len)), avg(static_cast<std::size_t>(len), 0);
      for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < len; ++i) {
          const float w = std::ldexp(1.0f, pow2(rng));
          full[static_cast<std::size_t>(h * len + i)] = w;
          avg[static_cast<std::size_t>(i)] += w / heads;
        }
      }
      full_tokens.push_back(full);
      avg_tokens.push_back(avg);
    }
    const RegionBoundaries b{3, 3, 6, 3};
    CHECK(aggregate_trial(dump_of(1, heads, s, full_tokens), b) == aggregate_trial(dump_of(1, 1, s, avg_tokens), b));
  }

  TEST_CASE("group summaries") {
    const AttentionProportions one{0.2, 0.5, 0.3, 1, 1};
    const auto single = aggregate_group(std::vector{one});
    CHECK(single.image.mean == 0.2);
    CHECK(single.image.median == 0.2);
    CHECK(single.image.q1 == 0.2);
    CHECK(single.image.max == 0.2);

    const AttentionProportions two{0.4, 0.3, 0.3, 1, 1};
    const auto pair = aggregate_group(std::vector{one, two});
    CHECK(pair.image.mean == doctest::Approx(0.3));
    CHECK(pair.prompt.mean == doctest::Approx(0.4));
    CHECK(pair.generated.mean == doctest::Approx(0.3));
    CHECK_THROWS_AS(aggregate_group(std::vector<AttentionProportions>{}), EmptyGroup);
  }

  TEST_CASE("quartiles interpolate linearly") {
    const std::vector<double> v{4, 1, 3, 2};
    const auto s = summarize(v);
    CHECK(s.median == 2.5);
    CHECK(s.q1 == 1.75);
    CHECK(s.q3 == 3.25);
    CHECK(s.min == 1);
    CHECK(s.max == 4);
    CHECK(s.n == 4);
  }
}
