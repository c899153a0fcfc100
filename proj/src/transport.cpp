#include "spfl/transport.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace spfl::transport {
namespace {

void check_probability(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw std::domain_error(std::string("transmit: ") + name + " must lie in [0, 1]");
  }
}

}  // namespace

double effective_sign_probability(double q, unsigned retransmit_limit) {
  if (retransmit_limit == 0) return q;
  // 1 - (1 - q)^(r + 1), accurate for small q.
  return -std::expm1(static_cast<double>(retransmit_limit + 1) * std::log1p(-q));
}

PacketOutcome transmit(double q, double p, CounterRng& rng, unsigned retransmit_limit) {
  check_probability(q, "q");
  check_probability(p, "p");
  PacketOutcome out;
  out.q_used = effective_sign_probability(q, retransmit_limit);
  out.p_used = p;
  out.sign_ok = rng.bernoulli(q);
  while (!out.sign_ok && out.retransmissions_used < retransmit_limit) {
    ++out.retransmissions_used;
    out.sign_ok = rng.bernoulli(q);
  }
  out.modulus_ok = rng.bernoulli(p);
  return out;
}

PacketOutcome transmit_physical(double alpha, double beta, double gain_sq,
                                const channel::ChannelParams& params, std::size_t device,
                                CounterRng& rng, unsigned retransmit_limit) {
  const double q = channel::q_sign(alpha, beta, params, device);
  PacketOutcome out;
  out.q_used = effective_sign_probability(q, retransmit_limit);
  out.p_used = channel::p_modulus(alpha, beta, params, device);
  out.sign_ok = alpha > 0.0 && channel::sign_delivered(alpha, beta, gain_sq, params, device);
  out.modulus_ok =
      alpha < 1.0 && channel::modulus_delivered(alpha, beta, gain_sq, params, device);
  while (!out.sign_ok && out.retransmissions_used < retransmit_limit) {
    ++out.retransmissions_used;
    out.sign_ok = alpha > 0.0 &&
                  channel::sign_delivered(alpha, beta, rng.exponential(), params, device);
  }
  return out;
}

std::optional<std::vector<double>> reconstruct(const PacketOutcome& outcome,
                                               const quantizer::QuantizedGradient& q,
                                               std::span<const double> compensation) {
  if (compensation.size() != q.size()) {
    throw std::invalid_argument("reconstruct: compensation length " +
                                std::to_string(compensation.size()) +
                                " does not match model dimension " + std::to_string(q.size()));
  }
  for (double c : compensation) {
    if (!(c >= 0.0)) throw std::invalid_argument("reconstruct: compensation must be >= 0");
  }
  if (!outcome.sign_ok) return std::nullopt;

  std::vector<double> out(q.size());
  if (outcome.modulus_ok) {
    for (std::size_t i = 0; i < q.size(); ++i) out[i] = q.signs[i] * q.knob(q.modulus_codes[i]);
  } else {
    for (std::size_t i = 0; i < q.size(); ++i) out[i] = q.signs[i] * compensation[i];
  }
  return out;
}

}  // namespace spfl::transport
