#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "spfl/rng.hpp"

namespace spfl::quantizer {

/// Sign vector plus b-bit modulus codes over the knob grid
/// c_u = g_min + u * (g_max - g_min) / (2^b - 1).
struct QuantizedGradient {
  std::vector<std::int8_t> signs;           // +1 or -1; sign(0) is +1
  std::vector<std::uint32_t> modulus_codes;  // in [0, 2^b - 1]
  double g_min = 0.0;
  double g_max = 0.0;
  unsigned bits = 1;

  std::size_t size() const { return signs.size(); }
  std::uint32_t max_code() const { return (1u << bits) - 1u; }
  /// Knob value c_u. The top knob is exactly g_max.
  double knob(std::uint32_t code) const;
};

struct QuantBound {
  double delta_sq = 0.0;
};

inline constexpr unsigned kMaxBits = 24;

/// Stochastic uniform quantization of |g| with sign split off. The range
/// [g_min, g_max] is the min/max of |g_i| over this gradient. Throws
/// std::invalid_argument on empty or non-finite input or bits outside [1, 24].
QuantizedGradient quantize(std::span<const double> gradient, unsigned bits, CounterRng& rng);

/// sign * knob(code), coordinate-wise. Throws std::out_of_range on a bad code.
std::vector<double> decode(const QuantizedGradient& q);

/// Decoded modulus vector (no signs).
std::vector<double> decode_modulus(const QuantizedGradient& q);

/// delta^2 = l (g_max - g_min)^2 / (4 (2^b - 1)).
QuantBound variance_bound(const QuantizedGradient& q, std::size_t model_dim);

/// The same bound computed from the range of |g| before quantizing.
QuantBound variance_bound_for(std::span<const double> gradient, unsigned bits);

/// Exact E||Q(g) - g||^2 of stochastic rounding on the knob grid of g:
/// sum_i (c_{u+1} - |g_i|)(|g_i| - c_u). Never exceeds variance_bound_for.
double expected_error(std::span<const double> gradient, unsigned bits);

/// Signum with sign(0) := +1.
inline std::int8_t sign_of(double x) { return x < 0.0 ? std::int8_t{-1} : std::int8_t{1}; }

}  // namespace spfl::quantizer
