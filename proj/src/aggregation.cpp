#include "spfl/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "spfl/quantizer.hpp"
#include "spfl/rng.hpp"
#include "spfl/transport.hpp"

namespace spfl::aggregation {

std::string_view to_string(CompensationKind kind) {
  switch (kind) {
    case CompensationKind::kZero:
      return "zero";
    case CompensationKind::kPreviousGlobalModulus:
      return "previous_global_modulus";
    case CompensationKind::kPreviousLocalModulus:
      return "previous_local_modulus";
  }
  return "unknown";
}

CompensationKind compensation_kind_from_string(std::string_view name) {
  for (auto kind : {CompensationKind::kZero, CompensationKind::kPreviousGlobalModulus,
                    CompensationKind::kPreviousLocalModulus}) {
    if (name == to_string(kind)) return kind;
  }
  throw std::invalid_argument("unknown compensation policy '" + std::string(name) +
                              "'; valid options: zero, previous_global_modulus, "
                              "previous_local_modulus");
}

CompensationPolicy::CompensationPolicy(CompensationKind kind, std::size_t num_devices,
                                       std::size_t model_dim)
    : kind_(kind), model_dim_(model_dim), previous_local_(num_devices) {}

void CompensationPolicy::record_round(std::span<const double> global_estimate,
                                      const std::vector<Vector>& local_gradients) {
  if (global_estimate.size() != model_dim_) {
    throw std::invalid_argument("record_round: global estimate has wrong dimension");
  }
  if (local_gradients.size() != previous_local_.size()) {
    throw std::invalid_argument("record_round: expected one local gradient per device");
  }
  previous_global_.assign(global_estimate.begin(), global_estimate.end());
  for (std::size_t k = 0; k < local_gradients.size(); ++k) {
    if (local_gradients[k].size() != model_dim_) {
      throw std::invalid_argument("record_round: local gradient has wrong dimension");
    }
    previous_local_[k] = local_gradients[k];
  }
  ++rounds_recorded_;
}

Vector compensation_vector(const CompensationPolicy& policy, std::size_t device) {
  Vector out(policy.model_dim_, 0.0);
  if (!policy.has_history()) return out;
  const Vector* source = nullptr;
  switch (policy.kind_) {
    case CompensationKind::kZero:
      return out;
    case CompensationKind::kPreviousGlobalModulus:
      source = &policy.previous_global_;
      break;
    case CompensationKind::kPreviousLocalModulus:
      source = &policy.previous_local_.at(device);
      break;
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs((*source)[i]);
  return out;
}

GlobalEstimate aggregate(std::span<const std::optional<Vector>> reconstructions,
                         std::span<const double> q_values, std::size_t num_devices,
                         std::size_t model_dim) {
  if (reconstructions.size() != num_devices || q_values.size() != num_devices) {
    throw std::invalid_argument("aggregate: expected one reconstruction and one q per device");
  }
  if (num_devices == 0) throw std::invalid_argument("aggregate: no devices");

  GlobalEstimate est;
  est.g_hat.assign(model_dim, 0.0);
  est.per_device_terms.assign(num_devices, Vector(model_dim, 0.0));
  for (std::size_t k = 0; k < num_devices; ++k) {
    if (!reconstructions[k]) continue;
    const Vector& v = *reconstructions[k];
    if (v.size() != model_dim) {
      throw std::invalid_argument("aggregate: reconstruction of device " + std::to_string(k) +
                                  " has wrong dimension");
    }
    if (!(q_values[k] > 0.0)) {
      throw std::invalid_argument("aggregate: device " + std::to_string(k) +
                                  " delivered with sign probability q = 0");
    }
    Vector& term = est.per_device_terms[k];
    for (std::size_t i = 0; i < model_dim; ++i) term[i] = v[i] / q_values[k];
    est.contributing.push_back(k);
  }
  const double inv_k = static_cast<double>(num_devices);
  for (std::size_t i = 0; i < model_dim; ++i) {
    double sum = 0.0;
    for (std::size_t k = 0; k < num_devices; ++k) sum += est.per_device_terms[k][i];
    est.g_hat[i] = sum / inv_k;
  }
  return est;
}

Vector update_model(std::span<const double> w, std::span<const double> g_hat, double eta) {
  if (w.size() != g_hat.size()) {
    throw std::invalid_argument("update_model: model and gradient dimensions differ");
  }
  if (!(eta > 0.0)) throw std::invalid_argument("update_model: learning rate must be > 0");
  Vector out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = w[i] - eta * g_hat[i];
  return out;
}

double upsilon(std::span<const double> gradient, std::span<const double> compensation) {
  if (gradient.size() != compensation.size()) {
    throw std::invalid_argument("upsilon: dimension mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < gradient.size(); ++i) {
    acc += std::abs(gradient[i]) * compensation[i];
  }
  return acc;
}

UnbiasednessReport unbiasedness_check(std::span<const UnbiasednessCase> cases,
                                      std::size_t trials, std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("unbiasedness_check: trials must be >= 1");
  UnbiasednessReport report;
  for (std::size_t k = 0; k < cases.size(); ++k) {
    const UnbiasednessCase& c = cases[k];
    const std::size_t l = c.gradient.size();
    Vector sum(l, 0.0);
    Vector sum_sq(l, 0.0);
    for (std::size_t t = 0; t < trials; ++t) {
      auto qrng = CounterRng::stream(seed, k, t, 0, StreamTag::kQuantize);
      auto trng = CounterRng::stream(seed, k, t, 0, StreamTag::kTransmit);
      const auto qg = quantizer::quantize(c.gradient, c.bits, qrng);
      const auto outcome = transport::transmit(c.q, c.p, trng);
      const auto rec = transport::reconstruct(outcome, qg, c.compensation);
      if (!rec) continue;
      for (std::size_t i = 0; i < l; ++i) {
        const double term = (*rec)[i] / outcome.q_used;
        sum[i] += term;
        sum_sq[i] += term * term;
      }
    }
    const double n = static_cast<double>(trials);
    for (std::size_t i = 0; i < l; ++i) {
      const double mean = sum[i] / n;
      const double expected = c.p * c.gradient[i] +
                              (1.0 - c.p) * quantizer::sign_of(c.gradient[i]) * c.compensation[i];
      const double dev = std::abs(mean - expected);
      const double var = std::max(0.0, sum_sq[i] / n - mean * mean);
      const double se = std::sqrt(var / n);
      report.max_deviation = std::max(report.max_deviation, dev);
      double z = 0.0;
      if (se > 0.0) {
        z = dev / se;
      } else if (dev > 1e-12 * (1.0 + std::abs(expected))) {
        z = std::numeric_limits<double>::infinity();
      }
      report.max_z = std::max(report.max_z, z);
    }
  }
  return report;
}

}  // namespace spfl::aggregation
