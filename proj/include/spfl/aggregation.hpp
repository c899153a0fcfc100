#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace spfl::aggregation {

using Vector = std::vector<double>;

enum class CompensationKind {
  kZero,
  kPreviousGlobalModulus,
  kPreviousLocalModulus,
};

std::string_view to_string(CompensationKind kind);
/// Throws std::invalid_argument listing the valid names.
CompensationKind compensation_kind_from_string(std::string_view name);

/// Source of the magnitude vector substituted when a device's sign packet
/// arrives but its modulus packet does not. Holds whatever history its kind
/// needs; every vector it hands out is elementwise nonnegative.
class CompensationPolicy {
 public:
  CompensationPolicy(CompensationKind kind, std::size_t num_devices, std::size_t model_dim);

  CompensationKind kind() const { return kind_; }
  std::size_t model_dim() const { return model_dim_; }
  std::size_t num_devices() const { return previous_local_.size(); }
  bool has_history() const { return rounds_recorded_ > 0; }

  /// Stores this round's global estimate and true local gradients as history
  /// for the next round.
  void record_round(std::span<const double> global_estimate,
                    const std::vector<Vector>& local_gradients);

  friend Vector compensation_vector(const CompensationPolicy& policy, std::size_t device);

 private:
  CompensationKind kind_;
  std::size_t model_dim_;
  std::uint64_t rounds_recorded_ = 0;
  Vector previous_global_;
  std::vector<Vector> previous_local_;
};

/// Zero before any history exists; afterwards |previous global estimate| or
/// |device's previous local gradient| depending on the policy kind.
Vector compensation_vector(const CompensationPolicy& policy, std::size_t device);

/// Server-side estimate of the global gradient for one round.
struct GlobalEstimate {
  Vector g_hat;
  std::vector<std::size_t> contributing;
  /// Addend of each device (reconstruction / q, or zeros when rejected).
  std::vector<Vector> per_device_terms;
};

/// g_hat = (1/K) sum_k present_k / q_k, summed in device order. Throws
/// std::invalid_argument when a present reconstruction has q <= 0 or a length
/// differs from model_dim.
GlobalEstimate aggregate(std::span<const std::optional<Vector>> reconstructions,
                         std::span<const double> q_values, std::size_t num_devices,
                         std::size_t model_dim);

/// w - eta * g_hat. Throws std::invalid_argument on dimension mismatch or eta <= 0.
Vector update_model(std::span<const double> w, std::span<const double> g_hat, double eta);

/// upsilon = <g, s(g) * gbar> = sum |g_i| gbar_i.
double upsilon(std::span<const double> gradient, std::span<const double> compensation);

/// One device's input to the Monte-Carlo unbiasedness check.
struct UnbiasednessCase {
  Vector gradient;
  Vector compensation;
  double q = 1.0;
  double p = 1.0;
  unsigned bits = 3;
};

struct UnbiasednessReport {
  /// Largest |MC mean - analytic mean| over devices and coordinates.
  double max_deviation = 0.0;
  /// Largest deviation measured in standard errors of the MC mean.
  double max_z = 0.0;
};

/// Runs quantize -> transmit -> reconstruct -> 1/q weighting `trials` times per
/// case and compares each device's mean term with p g + (1 - p) s(g) * gbar.
UnbiasednessReport unbiasedness_check(std::span<const UnbiasednessCase> cases,
                                      std::size_t trials, std::uint64_t seed);

}  // namespace spfl::aggregation
