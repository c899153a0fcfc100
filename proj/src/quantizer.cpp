#include "spfl/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace spfl::quantizer {

double QuantizedGradient::knob(std::uint32_t code) const {
  const std::uint32_t top = max_code();
  if (code > top) {
    throw std::out_of_range("modulus code " + std::to_string(code) + " exceeds 2^b - 1 = " +
                            std::to_string(top));
  }
  if (code == top) return g_max;
  return g_min + static_cast<double>(code) * ((g_max - g_min) / static_cast<double>(top));
}

QuantizedGradient quantize(std::span<const double> gradient, unsigned bits, CounterRng& rng) {
  if (gradient.empty()) throw std::invalid_argument("quantize: empty gradient");
  if (bits < 1 || bits > kMaxBits) {
    throw std::invalid_argument("quantize: bits must lie in [1, " + std::to_string(kMaxBits) +
                                "], got " + std::to_string(bits));
  }

  QuantizedGradient q;
  q.bits = bits;
  q.g_min = std::abs(gradient[0]);
  q.g_max = q.g_min;
  for (double g : gradient) {
    if (!std::isfinite(g)) throw std::invalid_argument("quantize: non-finite gradient entry");
    const double a = std::abs(g);
    q.g_min = std::min(q.g_min, a);
    q.g_max = std::max(q.g_max, a);
  }

  const std::size_t l = gradient.size();
  q.signs.resize(l);
  q.modulus_codes.assign(l, 0u);
  const std::uint32_t top = q.max_code();
  const bool degenerate = !(q.g_max > q.g_min);
  const double step = (q.g_max - q.g_min) / static_cast<double>(top);

  for (std::size_t i = 0; i < l; ++i) {
    q.signs[i] = sign_of(gradient[i]);
    if (degenerate) continue;
    const double a = std::abs(gradient[i]);
    // Lower knob index; clamp so that |g| == g_max lands in the last cell.
    auto u = static_cast<std::uint32_t>(
        std::min<double>(std::floor((a - q.g_min) / step), static_cast<double>(top - 1)));
    double lo = q.knob(u);
    if (a < lo && u > 0) lo = q.knob(--u);
    const double hi = q.knob(u + 1);
    const double up_prob = std::clamp((a - lo) / (hi - lo), 0.0, 1.0);
    q.modulus_codes[i] = rng.uniform() < up_prob ? u + 1 : u;
  }
  return q;
}

std::vector<double> decode_modulus(const QuantizedGradient& q) {
  std::vector<double> out(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) out[i] = q.knob(q.modulus_codes[i]);
  return out;
}

std::vector<double> decode(const QuantizedGradient& q) {
  std::vector<double> out = decode_modulus(q);
  for (std::size_t i = 0; i < q.size(); ++i) out[i] *= q.signs[i];
  return out;
}

QuantBound variance_bound(const QuantizedGradient& q, std::size_t model_dim) {
  if (!(q.g_max >= q.g_min) || q.g_min < 0.0) {
    throw std::invalid_argument("variance_bound: invalid quantization range");
  }
  const double range = q.g_max - q.g_min;
  const double levels = static_cast<double>(q.max_code());
  return QuantBound{static_cast<double>(model_dim) * range * range / (4.0 * levels)};
}

QuantBound variance_bound_for(std::span<const double> gradient, unsigned bits) {
  if (gradient.empty()) throw std::invalid_argument("variance_bound_for: empty gradient");
  if (bits < 1 || bits > kMaxBits) throw std::invalid_argument("variance_bound_for: bad bits");
  double lo = std::abs(gradient[0]);
  double hi = lo;
  for (double g : gradient) {
    lo = std::min(lo, std::abs(g));
    hi = std::max(hi, std::abs(g));
  }
  const double range = hi - lo;
  const double levels = static_cast<double>((1u << bits) - 1u);
  return QuantBound{static_cast<double>(gradient.size()) * range * range / (4.0 * levels)};
}

double expected_error(std::span<const double> gradient, unsigned bits) {
  if (gradient.empty()) throw std::invalid_argument("expected_error: empty gradient");
  if (bits < 1 || bits > kMaxBits) throw std::invalid_argument("expected_error: bad bits");
  double lo = std::abs(gradient[0]);
  double hi = lo;
  for (double g : gradient) {
    lo = std::min(lo, std::abs(g));
    hi = std::max(hi, std::abs(g));
  }
  if (!(hi > lo)) return 0.0;
  const double levels = static_cast<double>((1u << bits) - 1u);
  const double step = (hi - lo) / levels;
  double total = 0.0;
  for (double g : gradient) {
    const double a = std::abs(g);
    const double u = std::min(std::floor((a - lo) / step), levels - 1.0);
    const double below = lo + u * step;
    const double above = u + 1.0 >= levels ? hi : below + step;
    total += std::max(0.0, (above - a) * (a - below));
  }
  return total;
}

}  // namespace spfl::quantizer
