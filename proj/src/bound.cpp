#include "spfl/bound.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace spfl::bound {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_nonnegative(double v, const std::string& name) {
  if (!(v >= 0.0) || !std::isfinite(v)) {
    throw std::invalid_argument("bound inputs: " + name + " must be finite and >= 0");
  }
}

}  // namespace

void BoundInputs::validate() const {
  if (devices.empty()) throw std::invalid_argument("bound inputs: no devices");
  if (!(eta > 0.0)) throw std::invalid_argument("bound inputs: eta must be > 0");
  if (!(lipschitz > 0.0)) throw std::invalid_argument("bound inputs: lipschitz must be > 0");
  require_nonnegative(global_grad_norm_sq, "global_grad_norm_sq");
  for (std::size_t k = 0; k < devices.size(); ++k) {
    const auto& d = devices[k];
    const std::string at = "[" + std::to_string(k) + "]";
    require_nonnegative(d.grad_norm_sq, "grad_norm_sq" + at);
    require_nonnegative(d.upsilon, "upsilon" + at);
    require_nonnegative(d.epsilon_sq, "epsilon_sq" + at);
    require_nonnegative(d.delta_sq, "delta_sq" + at);
    require_nonnegative(d.comp_norm_sq, "comp_norm_sq" + at);
  }
}

GCoefficients g_coefficients(const DeviceTerms& d, double l_eta) {
  GCoefficients g;
  g.a = 2.0 * (-2.0 * d.grad_norm_sq - d.comp_norm_sq + 3.0 * d.upsilon);
  g.b = d.grad_norm_sq + d.comp_norm_sq - 2.0 * d.upsilon;
  g.c = l_eta * (d.grad_norm_sq - d.comp_norm_sq + d.delta_sq);
  g.d = l_eta * d.comp_norm_sq;
  return g;
}

GCoefficients g_coefficients(const BoundInputs& inputs, std::size_t device) {
  return g_coefficients(inputs.devices.at(device), inputs.l_eta());
}

double g_from_exponents(const GCoefficients& g, double alpha, double h_s, double h_v) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::domain_error("g_value: alpha must lie in [0, 1]");
  }
  if (alpha == 0.0) return kInf;
  const double q = std::exp(h_s / alpha);
  const double p = alpha < 1.0 ? std::exp(h_v / (1.0 - alpha)) : 0.0;
  const long double lp = p;
  if (q == 0.0) {
    // The 1/q terms dominate unless their combined weight is zero.
    if (g.c * p + g.d > 0.0) return kInf;
    return static_cast<double>(g.a * lp + g.b * lp * lp);
  }
  return static_cast<double>(g.a * lp + g.b * lp * lp + (g.c * lp + g.d) / q);
}

double g_value(const GCoefficients& coeffs, double alpha, double beta,
               const channel::ChannelParams& channel, std::size_t device) {
  return g_from_exponents(coeffs, alpha, channel::h_s(beta, channel, device),
                          channel::h_v(beta, channel, device));
}

double g_probability_form(const DeviceTerms& d, double l_eta, double q, double p) {
  if (!(q >= 0.0 && q <= 1.0) || !(p >= 0.0 && p <= 1.0)) {
    throw std::domain_error("g_probability_form: probabilities must lie in [0, 1]");
  }
  if (q == 0.0) return kInf;
  const long double lp = p;
  const long double lq = q;
  return static_cast<double>((-4.0L * lp + lp * lp + l_eta * lp / lq) * d.grad_norm_sq +
                             (-2.0L * lp + lp * lp + l_eta * (1.0L - lp) / lq) * d.comp_norm_sq +
                             (6.0L * lp - 2.0L * lp * lp) * d.upsilon +
                             l_eta * (lp / lq) * d.delta_sq);
}

namespace {

BoundDecomposition assemble(const BoundInputs& inputs, std::vector<double> per_device_g) {
  const double k = static_cast<double>(inputs.num_devices());
  const double eta = inputs.eta;
  BoundDecomposition out;
  double comp = 0.0;
  double gap = 0.0;
  double gsum = 0.0;
  for (std::size_t i = 0; i < inputs.num_devices(); ++i) {
    const auto& d = inputs.devices[i];
    comp += d.comp_norm_sq;
    gap += d.grad_norm_sq + d.epsilon_sq - 2.0 * d.upsilon;
    gsum += per_device_g[i];
  }
  out.gradient_term = -0.5 * eta * inputs.global_grad_norm_sq;
  out.compensation_term = 0.5 * eta * comp / k;
  out.gap_term = eta * gap / k;
  out.g_term = 0.5 * eta * gsum / k;
  out.total = out.gradient_term + out.compensation_term + out.gap_term + out.g_term;
  out.per_device_g = std::move(per_device_g);
  return out;
}

}  // namespace

BoundDecomposition one_step_bound_qp(const BoundInputs& inputs, std::span<const double> q,
                                     std::span<const double> p) {
  inputs.validate();
  if (q.size() != inputs.num_devices() || p.size() != inputs.num_devices()) {
    throw std::invalid_argument("one_step_bound: expected one (q, p) per device");
  }
  std::vector<double> g(inputs.num_devices());
  for (std::size_t k = 0; k < g.size(); ++k) {
    g[k] = g_probability_form(inputs.devices[k], inputs.l_eta(), q[k], p[k]);
  }
  return assemble(inputs, std::move(g));
}

BoundDecomposition one_step_bound(const BoundInputs& inputs, std::span<const double> alpha,
                                  std::span<const double> beta,
                                  const channel::ChannelParams& channel) {
  inputs.validate();
  if (alpha.size() != inputs.num_devices() || beta.size() != inputs.num_devices()) {
    throw std::invalid_argument("one_step_bound: expected one (alpha, beta) per device");
  }
  std::vector<double> g(inputs.num_devices());
  for (std::size_t k = 0; k < g.size(); ++k) {
    g[k] = g_value(g_coefficients(inputs, k), alpha[k], beta[k], channel, k);
  }
  return assemble(inputs, std::move(g));
}

std::vector<double> epsilon_oracle(const std::vector<std::vector<double>>& local_gradients,
                                   std::span<const double> global_gradient) {
  std::vector<double> out;
  out.reserve(local_gradients.size());
  for (const auto& g : local_gradients) {
    if (g.size() != global_gradient.size()) {
      throw std::invalid_argument("epsilon_oracle: dimension mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double diff = g[i] - global_gradient[i];
      acc += diff * diff;
    }
    out.push_back(acc);
  }
  return out;
}

}  // namespace spfl::bound
