#pragma once

#include <optional>
#include <span>
#include <vector>

#include "spfl/channel.hpp"
#include "spfl/quantizer.hpp"
#include "spfl/rng.hpp"

namespace spfl::transport {

/// Delivery result of one device's sign and modulus packets in one round.
struct PacketOutcome {
  bool sign_ok = false;
  bool modulus_ok = false;
  unsigned retransmissions_used = 0;
  /// Effective sign-delivery probability across all attempts; the aggregator
  /// divides by it. With no retransmission this is q itself.
  double q_used = 0.0;
  double p_used = 0.0;
};

/// Probability that at least one of (1 + retransmit_limit) independent sign
/// attempts with per-attempt probability q succeeds.
double effective_sign_probability(double q, unsigned retransmit_limit);

/// Bernoulli delivery against closed-form probabilities. The sign packet is
/// re-sent up to retransmit_limit times while it keeps failing; the modulus
/// packet is sent once. Throws std::domain_error if q or p is outside [0, 1].
PacketOutcome transmit(double q, double p, CounterRng& rng, unsigned retransmit_limit = 0);

/// Physical delivery: both packets of the first attempt share the fading gain
/// `gain_sq` (same channel, same slot) and succeed iff capacity >= rate.
/// Each sign retransmission occupies a new slot with a fresh gain from `rng`.
PacketOutcome transmit_physical(double alpha, double beta, double gain_sq,
                                const channel::ChannelParams& params, std::size_t device,
                                CounterRng& rng, unsigned retransmit_limit = 0);

/// CRC-gated reconstruction at the server:
///   sign lost              -> nullopt (device rejected)
///   sign ok, modulus ok    -> s(g) * Q_v(g)
///   sign ok, modulus lost  -> s(g) * compensation
/// Throws std::invalid_argument on a length mismatch or negative compensation.
std::optional<std::vector<double>> reconstruct(const PacketOutcome& outcome,
                                               const quantizer::QuantizedGradient& q,
                                               std::span<const double> compensation);

}  // namespace spfl::transport
