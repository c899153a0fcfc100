#include <gtest/gtest.h>

#include <cmath>

#include "spfl/channel.hpp"

namespace ch = spfl::channel;

namespace {

ch::ChannelParams reference_channel() {
  ch::ChannelParams p;
  p.bandwidth_total_hz = 10e6;
  p.noise_psd_w_per_hz = std::pow(10.0, -20.4);
  p.pathloss_exponent = 3.0;
  p.distances_m = {100.0};
  p.tx_power_w = {std::pow(10.0, -0.7) * 1e-3};
  p.latency_s = 0.5;
  p.model_dim = 60000;
  p.quant_bits = 3;
  p.range_bits = 64;
  return p;
}

}  // namespace

TEST(Exponent, MatchesHighPrecisionValue) {
  const auto p = reference_channel();
  // 50-digit evaluation of beta B N0 / (4 P d^-zeta) (1 - 2^(2 bits / (beta B tau))).
  EXPECT_NEAR(ch::h_s(0.05, p, 0) / -9.845214519270161747e-7, 1.0, 1e-12);
  EXPECT_NEAR(ch::h_v(0.05, p, 0) / -4.275277793068399469e-6, 1.0, 1e-12);
}

TEST(Exponent, NonPositiveAndOrdered) {
  const auto p = reference_channel();
  for (double beta : {1e-3, 0.01, 0.05, 0.3, 0.9}) {
    EXPECT_LE(ch::h_s(beta, p, 0), 0.0);
    EXPECT_LE(ch::h_v(beta, p, 0), ch::h_s(beta, p, 0));
  }
}

TEST(Exponent, DivergesAsBandwidthVanishes) {
  const auto p = reference_channel();
  EXPECT_TRUE(std::isinf(ch::h_s(1e-6, p, 0)) || ch::h_s(1e-6, p, 0) < -1e100);
  EXPECT_LT(ch::h_s(1e-3, p, 0), ch::h_s(1e-2, p, 0));
}

TEST(Exponent, EqualRatesGiveEqualExponents) {
  auto p = reference_channel();
  p.quant_bits = 1;
  p.range_bits = 0;
  EXPECT_DOUBLE_EQ(ch::h_s(0.07, p, 0), ch::h_v(0.07, p, 0));
}

TEST(Exponent, JetMatchesFiniteDifferences) {
  const auto p = reference_channel();
  const double beta = 0.04;
  const double h = 1e-6;
  const auto jet = ch::h_v_jet(beta, p, 0);
  EXPECT_DOUBLE_EQ(jet.value, ch::h_v(beta, p, 0));
  const double fd = (ch::h_v(beta + h, p, 0) - ch::h_v(beta - h, p, 0)) / (2 * h);
  EXPECT_NEAR(jet.d1 / fd, 1.0, 1e-6);
  const auto js = ch::h_s_jet(beta, p, 0);
  const double fd1 = (ch::h_s_jet(beta + h, p, 0).d1 - ch::h_s_jet(beta - h, p, 0).d1) / (2 * h);
  EXPECT_NEAR(js.d2 / fd1, 1.0, 1e-5);
}

TEST(Probabilities, Endpoints) {
  const auto p = reference_channel();
  EXPECT_EQ(ch::q_sign(0.0, 0.05, p, 0), 0.0);
  EXPECT_DOUBLE_EQ(ch::q_sign(1.0, 0.05, p, 0), std::exp(ch::h_s(0.05, p, 0)));
  EXPECT_EQ(ch::p_modulus(1.0, 0.05, p, 0), 0.0);
  EXPECT_DOUBLE_EQ(ch::p_modulus(0.0, 0.05, p, 0), std::exp(ch::h_v(0.05, p, 0)));
}

TEST(Probabilities, RejectOutOfRangeShares) {
  const auto p = reference_channel();
  EXPECT_THROW(ch::q_sign(1.5, 0.05, p, 0), std::domain_error);
  EXPECT_THROW(ch::q_sign(0.5, 0.0, p, 0), std::domain_error);
  EXPECT_THROW(ch::p_modulus(0.5, 1.0, p, 0), std::domain_error);
}

TEST(Probabilities, MatchMonteCarloOutage) {
  // Weak link so that both probabilities sit well inside (0, 1).
  auto p = reference_channel();
  p.distances_m = {7100.0};
  const double alpha = 0.5;
  const double beta = 0.05;
  const double q = ch::q_sign(alpha, beta, p, 0);
  const double pm = ch::p_modulus(alpha, beta, p, 0);
  ASSERT_GT(q, 0.05);
  ASSERT_LT(q, 0.95);
  ASSERT_GT(pm, 0.01);

  const std::size_t n = 1000000;
  std::size_t sign_ok = 0;
  std::size_t mod_ok = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = ch::draw_fading_gain(7, i, 0);
    sign_ok += ch::sign_delivered(alpha, beta, g, p, 0);
    mod_ok += ch::modulus_delivered(alpha, beta, g, p, 0);
  }
  const double fq = static_cast<double>(sign_ok) / n;
  const double fp = static_cast<double>(mod_ok) / n;
  EXPECT_LE(std::abs(fq - q), 3.0 * std::sqrt(q * (1 - q) / n));
  EXPECT_LE(std::abs(fp - pm), 3.0 * std::sqrt(pm * (1 - pm) / n));
}

TEST(Fading, UnitMeanAndDeterministic) {
  double sum = 0.0;
  const std::size_t n = 1000000;
  for (std::size_t i = 0; i < n; ++i) sum += ch::draw_fading_gain(3, i, 1);
  EXPECT_NEAR(sum / n, 1.0, 0.01);

  const auto a = ch::draw_fading(11, 4, 8);
  const auto b = ch::draw_fading(11, 4, 8);
  EXPECT_EQ(a.gain_sq, b.gain_sq);
  const auto c = ch::draw_fading(11, 5, 8);
  EXPECT_NE(a.gain_sq, c.gain_sq);
}

TEST(Fading, AddingDevicesKeepsExistingDraws) {
  const auto small = ch::draw_fading(5, 2, 3);
  const auto large = ch::draw_fading(5, 2, 10);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(small.gain_sq[k], large.gain_sq[k]);
}

TEST(ChannelParams, ValidateNamesField) {
  auto p = reference_channel();
  p.tx_power_w.clear();
  try {
    p.validate();
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("tx_power_w"), std::string::npos);
  }
}
