#pragma once

#include <span>
#include <vector>

#include "spfl/channel.hpp"

namespace spfl::bound {

/// Per-device quantities entering the one-step bound.
struct DeviceTerms {
  double grad_norm_sq = 0.0;  // ||g_k||^2
  double upsilon = 0.0;       // <g_k, s(g_k) * gbar_k>
  double epsilon_sq = 0.0;    // ||g_k - g||^2 bound
  double delta_sq = 0.0;      // quantization MSE bound
  double comp_norm_sq = 0.0;  // ||gbar_k||^2
};

struct BoundInputs {
  std::vector<DeviceTerms> devices;
  double global_grad_norm_sq = 0.0;
  double eta = 0.05;
  double lipschitz = 20.0;

  std::size_t num_devices() const { return devices.size(); }
  double l_eta() const { return lipschitz * eta; }
  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// G = A p + B p^2 + C p / q + D / q, with p = exp(H_v / (1 - alpha)) and
/// q = exp(H_s / alpha).
struct GCoefficients {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double d = 0.0;
};

GCoefficients g_coefficients(const DeviceTerms& device, double l_eta);
GCoefficients g_coefficients(const BoundInputs& inputs, std::size_t device);

/// Four-exponential form in terms of the raw exponents h_s = H_s(beta) and
/// h_v = H_v(beta). Returns +inf when the sign packet can never arrive.
double g_from_exponents(const GCoefficients& coeffs, double alpha, double h_s, double h_v);

/// Four-exponential form at (alpha, beta) for one device of `channel`.
double g_value(const GCoefficients& coeffs, double alpha, double beta,
               const channel::ChannelParams& channel, std::size_t device);

/// Probability form evaluated directly from (q, p). +inf when q = 0.
double g_probability_form(const DeviceTerms& device, double l_eta, double q, double p);

/// Right-hand side of the one-step bound, split by term.
struct BoundDecomposition {
  double gradient_term = 0.0;      // -(eta/2) ||g||^2
  double compensation_term = 0.0;  // (eta/2K) sum ||gbar_k||^2
  double gap_term = 0.0;           // (eta/K) sum (||g_k||^2 + eps_k^2 - 2 upsilon_k)
  double g_term = 0.0;             // (eta/2K) sum G_k
  double total = 0.0;
  std::vector<double> per_device_g;
};

/// Bound for delivery probabilities given directly.
BoundDecomposition one_step_bound_qp(const BoundInputs& inputs, std::span<const double> q,
                                     std::span<const double> p);

/// Bound for an allocation (alpha, beta) on `channel`.
BoundDecomposition one_step_bound(const BoundInputs& inputs, std::span<const double> alpha,
                                  std::span<const double> beta,
                                  const channel::ChannelParams& channel);

/// Exact ||g_k - g||^2 for every device.
std::vector<double> epsilon_oracle(const std::vector<std::vector<double>>& local_gradients,
                                   std::span<const double> global_gradient);

}  // namespace spfl::bound
