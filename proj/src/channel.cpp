#include "spfl/channel.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "spfl/rng.hpp"

namespace spfl::channel {
namespace {

void require_positive(double v, const char* field) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw std::invalid_argument(std::string("ChannelParams.") + field +
                                " must be finite and strictly positive");
  }
}

void check_beta(double beta) {
  if (!(beta > 0.0 && beta < 1.0)) {
    throw std::domain_error("bandwidth share beta must lie in (0, 1), got " +
                            std::to_string(beta));
  }
}

void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::domain_error("power share alpha must lie in [0, 1], got " +
                            std::to_string(alpha));
  }
}

double path_gain(const ChannelParams& params, std::size_t device) {
  return std::pow(params.distances_m.at(device), -params.pathloss_exponent);
}

// H(beta) = c0 * beta * (1 - exp(k / beta)) with c0 = B N0 / (4 P d^-zeta) and
// k = ln2 * 2 * bits / (B tau); both packets use half of the device band.
ExponentJet exponent_jet(double beta, double bits, const ChannelParams& params,
                         std::size_t device) {
  check_beta(beta);
  const double c0 = params.bandwidth_total_hz * params.noise_psd_w_per_hz /
                    (4.0 * params.tx_power_w.at(device) * path_gain(params, device));
  const double k =
      std::numbers::ln2 * 2.0 * bits / (params.bandwidth_total_hz * params.latency_s);
  const double r = k / beta;
  const double em1 = std::expm1(r);
  const double e = std::exp(r);
  ExponentJet jet{};
  jet.value = -c0 * beta * em1;
  jet.d1 = c0 * (r * e - em1);
  jet.d2 = -c0 * e * r * r / beta;
  return jet;
}

}  // namespace

void ChannelParams::validate() const {
  require_positive(bandwidth_total_hz, "bandwidth_total_hz");
  require_positive(noise_psd_w_per_hz, "noise_psd_w_per_hz");
  require_positive(pathloss_exponent, "pathloss_exponent");
  require_positive(latency_s, "latency_s");
  if (model_dim < 1) throw std::invalid_argument("ChannelParams.model_dim must be >= 1");
  if (quant_bits < 1) throw std::invalid_argument("ChannelParams.quant_bits must be >= 1");
  if (range_bits < 1) throw std::invalid_argument("ChannelParams.range_bits must be >= 1");
  if (distances_m.empty()) {
    throw std::invalid_argument("ChannelParams.distances_m must list at least one device");
  }
  if (tx_power_w.size() != distances_m.size()) {
    throw std::invalid_argument("ChannelParams.tx_power_w must have one entry per device");
  }
  for (double d : distances_m) require_positive(d, "distances_m");
  for (double p : tx_power_w) require_positive(p, "tx_power_w");
}

double outage_exponent(double bandwidth_hz, double power_w, double bits,
                       const ChannelParams& params, std::size_t device) {
  if (!(bandwidth_hz > 0.0)) return -std::numeric_limits<double>::infinity();
  if (!(power_w > 0.0)) return -std::numeric_limits<double>::infinity();
  const double spectral = bits / (params.latency_s * bandwidth_hz);
  const double growth = std::expm1(spectral * std::numbers::ln2);  // 2^x - 1
  return -bandwidth_hz * params.noise_psd_w_per_hz * growth /
         (2.0 * power_w * path_gain(params, device));
}

double h_s(double beta, const ChannelParams& params, std::size_t device) {
  return exponent_jet(beta, params.sign_packet_bits(), params, device).value;
}

double h_v(double beta, const ChannelParams& params, std::size_t device) {
  return exponent_jet(beta, params.modulus_packet_bits(), params, device).value;
}

ExponentJet h_s_jet(double beta, const ChannelParams& params, std::size_t device) {
  return exponent_jet(beta, params.sign_packet_bits(), params, device);
}

ExponentJet h_v_jet(double beta, const ChannelParams& params, std::size_t device) {
  return exponent_jet(beta, params.modulus_packet_bits(), params, device);
}

double q_sign(double alpha, double beta, const ChannelParams& params, std::size_t device) {
  check_alpha(alpha);
  const double hs = h_s(beta, params, device);
  if (alpha == 0.0) return 0.0;
  return std::exp(hs / alpha);
}

double p_modulus(double alpha, double beta, const ChannelParams& params,
                 std::size_t device) {
  check_alpha(alpha);
  const double hv = h_v(beta, params, device);
  if (alpha == 1.0) return 0.0;
  return std::exp(hv / (1.0 - alpha));
}

double capacity_bps(double bandwidth_hz, double power_w, double gain_sq,
                    const ChannelParams& params, std::size_t device) {
  const double snr = power_w * kFadingPowerScale * gain_sq * path_gain(params, device) /
                     (bandwidth_hz * params.noise_psd_w_per_hz);
  return bandwidth_hz * std::log2(1.0 + snr);
}

bool packet_delivered(double bandwidth_hz, double power_w, double bits, double gain_sq,
                      const ChannelParams& params, std::size_t device) {
  if (!(bandwidth_hz > 0.0) || !(power_w > 0.0)) return false;
  return capacity_bps(bandwidth_hz, power_w, gain_sq, params, device) >=
         bits / params.latency_s;
}

bool sign_delivered(double alpha, double beta, double gain_sq, const ChannelParams& params,
                    std::size_t device) {
  check_alpha(alpha);
  check_beta(beta);
  const double band = 0.5 * beta * params.bandwidth_total_hz;
  return packet_delivered(band, alpha * params.tx_power_w.at(device),
                          params.sign_packet_bits(), gain_sq, params, device);
}

bool modulus_delivered(double alpha, double beta, double gain_sq,
                       const ChannelParams& params, std::size_t device) {
  check_alpha(alpha);
  check_beta(beta);
  const double band = 0.5 * beta * params.bandwidth_total_hz;
  return packet_delivered(band, (1.0 - alpha) * params.tx_power_w.at(device),
                          params.modulus_packet_bits(), gain_sq, params, device);
}

double draw_fading_gain(std::uint64_t seed, std::uint64_t round, std::size_t device) {
  auto rng = CounterRng::stream(seed, 0, round, device, StreamTag::kFading);
  return rng.exponential();
}

FadingDraw draw_fading(std::uint64_t seed, std::uint64_t round, std::size_t num_devices) {
  FadingDraw draw;
  draw.round = round;
  draw.gain_sq.reserve(num_devices);
  for (std::size_t k = 0; k < num_devices; ++k) {
    draw.gain_sq.push_back(draw_fading_gain(seed, round, k));
  }
  return draw;
}

}  // namespace spfl::channel
