#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace spfl::channel {

/// Static wireless constants for one round. Powers and noise are linear watts.
struct ChannelParams {
  double bandwidth_total_hz = 10e6;
  double noise_psd_w_per_hz = 0.0;
  double pathloss_exponent = 3.0;
  std::vector<double> distances_m;
  std::vector<double> tx_power_w;
  double latency_s = 0.5;
  std::size_t model_dim = 1;
  unsigned quant_bits = 3;
  unsigned range_bits = 64;

  std::size_t num_devices() const { return distances_m.size(); }

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;

  /// Bits in the sign packet: one per coordinate.
  double sign_packet_bits() const { return static_cast<double>(model_dim); }
  /// Bits in the modulus packet: b per coordinate plus the range header.
  double modulus_packet_bits() const {
    return static_cast<double>(model_dim) * quant_bits + range_bits;
  }
  double sign_rate_bps() const { return sign_packet_bits() / latency_s; }
  double modulus_rate_bps() const { return modulus_packet_bits() / latency_s; }
};

/// Per-device fading power gains for one round.
///
/// gain_sq is normalized to unit mean. The channel coefficient follows the
/// convention in which each quadrature component of h has unit variance, so
/// the instantaneous power gain entering the capacity is |h|^2 = 2 * gain_sq.
/// Under that convention the closed-form success probabilities below are exact.
struct FadingDraw {
  std::vector<double> gain_sq;
  std::uint64_t round = 0;
};

inline constexpr double kFadingPowerScale = 2.0;

/// Outage exponent of a packet carrying `bits` over `bandwidth_hz` with
/// `power_w` at `device`: delivery probability is exp(result) under Rayleigh
/// fading. Always <= 0; -inf when the required spectral efficiency overflows.
double outage_exponent(double bandwidth_hz, double power_w, double bits,
                       const ChannelParams& params, std::size_t device);

/// Sign-packet exponent H_s(beta): sign packet on half of the device's band
/// at full device power. Requires 0 < beta < 1.
double h_s(double beta, const ChannelParams& params, std::size_t device);

/// Modulus-packet exponent H_v(beta). Requires 0 < beta < 1.
double h_v(double beta, const ChannelParams& params, std::size_t device);

/// Value and first two derivatives of H_s or H_v with respect to beta.
struct ExponentJet {
  double value;
  double d1;
  double d2;
};
ExponentJet h_s_jet(double beta, const ChannelParams& params, std::size_t device);
ExponentJet h_v_jet(double beta, const ChannelParams& params, std::size_t device);

/// Sign-packet delivery probability: exp(H_s / alpha), 0 at alpha = 0.
double q_sign(double alpha, double beta, const ChannelParams& params, std::size_t device);

/// Modulus-packet delivery probability: exp(H_v / (1 - alpha)), 0 at alpha = 1.
double p_modulus(double alpha, double beta, const ChannelParams& params,
                 std::size_t device);

/// Shannon capacity of a link of `bandwidth_hz` carrying `power_w` through a
/// channel with normalized fading power `gain_sq`.
double capacity_bps(double bandwidth_hz, double power_w, double gain_sq,
                    const ChannelParams& params, std::size_t device);

/// Physical delivery test: capacity at the drawn fading meets the packet rate.
bool packet_delivered(double bandwidth_hz, double power_w, double bits, double gain_sq,
                      const ChannelParams& params, std::size_t device);

bool sign_delivered(double alpha, double beta, double gain_sq, const ChannelParams& params,
                    std::size_t device);
bool modulus_delivered(double alpha, double beta, double gain_sq,
                       const ChannelParams& params, std::size_t device);

/// I.i.d. unit-mean exponential gains, one counter-based stream per
/// (seed, round, device) so that adding devices never perturbs existing ones.
FadingDraw draw_fading(std::uint64_t seed, std::uint64_t round, std::size_t num_devices);

/// Single-device draw from the same stream draw_fading uses.
double draw_fading_gain(std::uint64_t seed, std::uint64_t round, std::size_t device);

}  // namespace spfl::channel
