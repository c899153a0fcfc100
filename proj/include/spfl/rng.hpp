#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace spfl {

/// Purpose tags that separate the random streams drawn for one (device, round).
enum class StreamTag : std::uint64_t {
  kFading = 1,
  kQuantize = 2,
  kTransmit = 3,
  kDataset = 4,
  kPartition = 5,
  kModelInit = 6,
  kRetransmitFading = 7,
  kPlacement = 8,
};

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Counter-based generator: the i-th output is mix64(key + i * gamma), so a stream
/// is fully determined by its key and can be created anywhere without shared state.
/// Satisfies UniformRandomBitGenerator, so it plugs into <random> distributions.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t key) : key_(mix64(key)) {}

  /// Stream for one (seed, a, b, c, tag) tuple, e.g. (seed, repetition, round, device).
  static CounterRng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                           std::uint64_t c, StreamTag tag) {
    std::uint64_t h = mix64(seed);
    h = mix64(h ^ (a + 0x632BE59BD9B4E019ULL));
    h = mix64(h ^ (b + 0x8CB92BA72F3D8DD7ULL));
    h = mix64(h ^ (c + 0xD6E8FEB86659FD93ULL));
    h = mix64(h ^ static_cast<std::uint64_t>(tag));
    return CounterRng(h);
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    counter_ += 0x9E3779B97F4A7C15ULL;
    return mix64(key_ + counter_);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Unit-mean exponential variate.
  double exponential() { return -std::log1p(-uniform()); }

  /// Standard normal variate (Box-Muller, one output per call).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace spfl
