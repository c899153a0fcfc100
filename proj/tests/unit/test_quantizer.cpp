#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "spfl/quantizer.hpp"

namespace qz = spfl::quantizer;
using spfl::CounterRng;

namespace {

std::vector<double> random_gradient(std::size_t l, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<double> g(l);
  for (double& x : g) x = rng.normal() * (0.1 + rng.uniform());
  return g;
}

}  // namespace

TEST(Quantize, TopCoordinateAlwaysMapsToTopKnob) {
  const std::vector<double> g{0.1, -0.5, 1.0, 0.3};
  CounterRng rng(1);
  for (int t = 0; t < 1000; ++t) {
    const auto q = qz::quantize(g, 3, rng);
    EXPECT_EQ(q.modulus_codes[2], q.max_code());
  }
}

TEST(Quantize, MidpointSplitsEvenly) {
  // b = 2 on [0, 3]: knobs 0, 1, 2, 3; 1.5 sits midway between codes 1 and 2.
  const std::vector<double> g{0.0, 1.5, 3.0};
  CounterRng rng(2);
  const int n = 100000;
  int up = 0;
  for (int t = 0; t < n; ++t) {
    const auto q = qz::quantize(g, 2, rng);
    ASSERT_TRUE(q.modulus_codes[1] == 1 || q.modulus_codes[1] == 2);
    up += q.modulus_codes[1] == 2;
  }
  EXPECT_NEAR(static_cast<double>(up) / n, 0.5, 0.01);
}

TEST(Quantize, DecodedMeanIsUnbiased) {
  const auto g = random_gradient(50, 3);
  CounterRng rng(4);
  const int n = 100000;
  std::vector<double> sum(g.size(), 0.0);
  std::vector<double> sum_sq(g.size(), 0.0);
  for (int t = 0; t < n; ++t) {
    const auto v = qz::decode(qz::quantize(g, 3, rng));
    for (std::size_t i = 0; i < g.size(); ++i) {
      sum[i] += v[i];
      sum_sq[i] += v[i] * v[i];
    }
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double mean = sum[i] / n;
    const double var = sum_sq[i] / n - mean * mean;
    EXPECT_LE(std::abs(mean - g[i]), 3.0 * std::sqrt(var / n) + 1e-15) << "coordinate " << i;
  }
}

TEST(Quantize, RejectsBadInput) {
  CounterRng rng(5);
  const std::vector<double> empty;
  EXPECT_THROW(qz::quantize(empty, 3, rng), std::invalid_argument);
  const std::vector<double> g{1.0, NAN};
  EXPECT_THROW(qz::quantize(g, 3, rng), std::invalid_argument);
  const std::vector<double> ok{1.0, 2.0};
  EXPECT_THROW(qz::quantize(ok, 0, rng), std::invalid_argument);
  EXPECT_THROW(qz::quantize(ok, 25, rng), std::invalid_argument);
}

TEST(Decode, KnobArithmetic) {
  qz::QuantizedGradient q;
  q.bits = 3;
  q.g_min = 0.2;
  q.g_max = 1.0;
  q.signs = {1, -1, -1};
  q.modulus_codes = {0, 7, 4};
  const auto v = qz::decode(q);
  EXPECT_DOUBLE_EQ(v[0], 0.2);
  EXPECT_DOUBLE_EQ(v[1], -1.0);
  EXPECT_NEAR(v[2], -(0.2 + 4 * 0.8 / 7), 1e-15);
  q.modulus_codes[0] = 8;
  EXPECT_THROW(qz::decode(q), std::out_of_range);
}

TEST(VarianceBound, DirectSubstitution) {
  qz::QuantizedGradient q;
  q.bits = 1;
  q.g_min = 0.5;
  q.g_max = 1.5;
  EXPECT_DOUBLE_EQ(qz::variance_bound(q, 4).delta_sq, 1.0);
  q.g_max = q.g_min;
  EXPECT_DOUBLE_EQ(qz::variance_bound(q, 4).delta_sq, 0.0);
}

TEST(VarianceBound, EmpiricalErrorStaysBelow) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto g = random_gradient(40, 100 + s);
    const unsigned bits = 1 + s % 4;
    const double bound = qz::variance_bound_for(g, bits).delta_sq;
    CounterRng rng(200 + s);
    const int n = 20000;
    double mse = 0.0;
    for (int t = 0; t < n; ++t) {
      const auto v = qz::decode(qz::quantize(g, bits, rng));
      for (std::size_t i = 0; i < g.size(); ++i) mse += (v[i] - g[i]) * (v[i] - g[i]);
    }
    EXPECT_LE(mse / n, bound) << "gradient " << s;
  }
}

TEST(ExpectedError, MatchesMonteCarloAndBound) {
  const auto g = random_gradient(30, 9);
  for (unsigned bits : {1u, 2u, 4u}) {
    const double exact = qz::expected_error(g, bits);
    EXPECT_LE(exact, qz::variance_bound_for(g, bits).delta_sq);
    CounterRng rng(10 + bits);
    const int n = 100000;
    double sum = 0.0;
    double sum_sq = 0.0;
    for (int t = 0; t < n; ++t) {
      const auto v = qz::decode(qz::quantize(g, bits, rng));
      double e = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) e += (v[i] - g[i]) * (v[i] - g[i]);
      sum += e;
      sum_sq += e * e;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sum_sq / n - mean * mean) / n);
    EXPECT_LE(std::abs(mean - exact), 4.0 * se) << "bits " << bits;
  }
}

TEST(ExpectedError, ZeroOnConstantModulus) {
  const std::vector<double> g{0.5, -0.5, 0.5};
  EXPECT_EQ(qz::expected_error(g, 2), 0.0);
}
