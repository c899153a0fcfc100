#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "instances.hpp"
#include "spfl/allocator.hpp"

namespace al = spfl::allocator;
namespace bd = spfl::bound;
using spfl::testing::random_instance;

namespace {

double grid_min(const bd::GCoefficients& g, double hs, double hv) {
  double best = INFINITY;
  for (int i = 1; i <= 999; ++i) best = std::min(best, bd::g_from_exponents(g, i / 999.0, hs, hv));
  return best;
}

}  // namespace

TEST(PowerStep, BeatsGridAndHasSmallResiduals) {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto inst = random_instance(4, s);
    const std::vector<double> beta(4, 0.2);
    std::vector<double> residuals;
    const auto alpha = al::optimize_power(inst.coeffs, beta, inst.channel, &residuals);
    for (std::size_t k = 0; k < 4; ++k) {
      const double hs = spfl::channel::h_s(beta[k], inst.channel, k);
      const double hv = spfl::channel::h_v(beta[k], inst.channel, k);
      const double g = bd::g_from_exponents(inst.coeffs[k], alpha[k], hs, hv);
      const double ref = grid_min(inst.coeffs[k], hs, hv);
      EXPECT_LE(g, ref + 1e-9 * std::abs(ref)) << "instance " << s << " device " << k;
      EXPECT_LE(residuals[k], al::kGamma1);
      EXPECT_LT(al::gprime(inst.coeffs[k], 1e-6, beta[k], inst.channel, k), 0.0);
    }
  }
}

TEST(PowerStep, NoInteriorRootGivesFullSignPower) {
  // upsilon at its Cauchy-Schwarz maximum makes A = B = 0; G then falls in alpha.
  const auto d = bd::DeviceTerms{1.0, 1.0, 0.0, 0.1, 1.0};
  const auto g = bd::g_coefficients(d, 1.0);
  ASSERT_DOUBLE_EQ(g.a, 0.0);
  const auto sol = al::optimize_power_device(g, -0.2, -0.5);
  EXPECT_DOUBLE_EQ(sol.alpha, 1.0);
  EXPECT_TRUE(sol.roots.empty());
}

TEST(PowerStep, RejectsInfeasibleBandwidth) {
  const auto inst = random_instance(2, 1);
  const std::vector<double> beta{0.0, 0.5};
  EXPECT_THROW(al::optimize_power(inst.coeffs, beta, inst.channel), al::AllocationError);
}

TEST(Derivative, MatchesCentralDifferences) {
  spfl::CounterRng rng(3);
  for (int t = 0; t < 100; ++t) {
    const auto inst = random_instance(1, 100 + t);
    const double alpha = 0.05 + 0.9 * rng.uniform();
    const double beta = 0.2 + 0.7 * rng.uniform();
    const double h = 1e-6;
    const double fd = (bd::g_value(inst.coeffs[0], alpha + h, beta, inst.channel, 0) -
                       bd::g_value(inst.coeffs[0], alpha - h, beta, inst.channel, 0)) /
                      (2 * h);
    const double an = al::gprime(inst.coeffs[0], alpha, beta, inst.channel, 0);
    EXPECT_NEAR(an, fd, 1e-5 * std::max(1.0, std::abs(fd)));

    const double fdb = (bd::g_value(inst.coeffs[0], alpha, beta + h, inst.channel, 0) -
                        bd::g_value(inst.coeffs[0], alpha, beta - h, inst.channel, 0)) /
                       (2 * h);
    const double anb = al::g_beta_derivative(inst.coeffs[0], alpha, beta, inst.channel, 0);
    EXPECT_NEAR(anb, fdb, 1e-5 * std::max(1.0, std::abs(fdb)));
  }
  const auto inst = random_instance(1, 0);
  EXPECT_THROW(al::gprime(inst.coeffs[0], 0.0, 0.5, inst.channel, 0), std::domain_error);
}

TEST(Sca, SingleDeviceTakesWholeBand) {
  const auto inst = random_instance(1, 4);
  const std::vector<double> alpha{0.5};
  const std::vector<double> start{0.5};
  const auto res = al::optimize_bandwidth_sca(inst.coeffs, alpha, inst.channel, start);
  double best_beta = 0.0;
  double best = INFINITY;
  for (int i = 1; i <= 10000; ++i) {
    const double b = i / 10000.0 * (1.0 - 1e-12);
    const double v = bd::g_value(inst.coeffs[0], 0.5, b, inst.channel, 0);
    if (v < best) {
      best = v;
      best_beta = b;
    }
  }
  EXPECT_NEAR(res.beta[0], best_beta, 1e-3);
  EXPECT_GE(res.beta[0], 0.999);
}

TEST(Sca, IdenticalDevicesGetEqualShares) {
  auto inst = random_instance(1, 5);
  inst.channel.distances_m.push_back(inst.channel.distances_m[0]);
  inst.channel.tx_power_w.push_back(inst.channel.tx_power_w[0]);
  inst.coeffs.push_back(inst.coeffs[0]);
  const std::vector<double> alpha{0.4, 0.4};
  const std::vector<double> start{0.3, 0.3};
  const auto res = al::optimize_bandwidth_sca(inst.coeffs, alpha, inst.channel, start);
  EXPECT_NEAR(res.beta[0], res.beta[1], 1e-6);
}

TEST(Sca, TraceIsMonotone) {
  const auto inst = random_instance(6, 6);
  const std::vector<double> alpha(6, 0.5);
  const std::vector<double> start(6, 0.999 / 6);
  const auto res = al::optimize_bandwidth_sca(inst.coeffs, alpha, inst.channel, start);
  for (std::size_t i = 1; i < res.objective_trace.size(); ++i) {
    EXPECT_LE(res.objective_trace[i], res.objective_trace[i - 1]);
  }
  EXPECT_LE(std::accumulate(res.beta.begin(), res.beta.end(), 0.0), 1.0 + 1e-12);
}

TEST(Penalty, StaysInsideSimplexAndMatchesSca) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto inst = random_instance(3, 20 + s);
    const std::vector<double> alpha(3, 0.5);
    const std::vector<double> start(3, 0.999 / 3);
    const auto pen = al::optimize_bandwidth_penalty(inst.coeffs, alpha, inst.channel, start);
    EXPECT_LT(std::accumulate(pen.beta.begin(), pen.beta.end(), 0.0), 1.0);
    EXPECT_TRUE(pen.monotone_within_stages);
    const auto sca = al::optimize_bandwidth_sca(inst.coeffs, alpha, inst.channel, start);
    const double fp = al::total_objective(inst.coeffs, alpha, pen.beta, inst.channel);
    const double fs = al::total_objective(inst.coeffs, alpha, sca.beta, inst.channel);
    EXPECT_NEAR(fp, fs, 1e-3 * std::abs(fs));
  }
}

TEST(Alternate, MonotoneAndBetterThanUniform) {
  for (auto method : {al::BandwidthMethod::kSca, al::BandwidthMethod::kPenalty}) {
    const auto inst = random_instance(3, 30);
    al::AlternateOptions opts;
    opts.method = method;
    const auto res = al::alternate(inst.coeffs, inst.channel, opts);
    const auto& trace = res.diagnostics.objective_trace;
    for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_LE(trace[i], trace[i - 1]);
    const std::vector<double> half(3, 0.5);
    const std::vector<double> third(3, 1.0 / 3);
    EXPECT_LE(res.objective, al::total_objective(inst.coeffs, half, third, inst.channel));
    EXPECT_NO_THROW(res.allocation.validate());
  }
}

TEST(Alternate, SymmetricDevicesStaySymmetric) {
  auto inst = random_instance(1, 31);
  for (int k = 0; k < 2; ++k) {
    inst.channel.distances_m.push_back(inst.channel.distances_m[0]);
    inst.channel.tx_power_w.push_back(inst.channel.tx_power_w[0]);
    inst.coeffs.push_back(inst.coeffs[0]);
  }
  const auto res = al::alternate(inst.coeffs, inst.channel);
  for (int k = 1; k < 3; ++k) {
    EXPECT_NEAR(res.allocation.alpha[k], res.allocation.alpha[0], 1e-6);
    EXPECT_NEAR(res.allocation.beta[k], res.allocation.beta[0], 1e-6);
  }
}

TEST(Alternate, LargerGradientGetsMoreBandwidth) {
  auto inst = random_instance(2, 32);
  inst.channel.distances_m[1] = inst.channel.distances_m[0];
  auto big = inst.terms[0];
  big.grad_norm_sq *= 10.0;
  big.upsilon *= std::sqrt(10.0);
  inst.coeffs = {bd::g_coefficients(inst.terms[0], 1.0), bd::g_coefficients(big, 1.0)};
  const auto res = al::alternate(inst.coeffs, inst.channel);
  EXPECT_GT(res.allocation.beta[1], res.allocation.beta[0]);
}

TEST(AllocationPair, Validate) {
  al::AllocationPair ok = al::initial_allocation(4);
  EXPECT_NO_THROW(ok.validate());
  al::AllocationPair bad = ok;
  bad.alpha[0] = 1.5;
  EXPECT_THROW(bad.validate(), al::AllocationError);
  bad = ok;
  bad.beta.assign(4, 0.3);
  EXPECT_THROW(bad.validate(), al::AllocationError);
}

TEST(BandwidthMethod, Names) {
  EXPECT_EQ(al::bandwidth_method_from_string("sca"), al::BandwidthMethod::kSca);
  EXPECT_EQ(al::bandwidth_method_from_string("penalty"), al::BandwidthMethod::kPenalty);
  EXPECT_THROW(al::bandwidth_method_from_string("cvx"), std::invalid_argument);
}
