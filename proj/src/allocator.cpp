#include "spfl/allocator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace spfl::allocator {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double coefficient_scale(std::span<const GCoefficients> coeffs) {
  double s = 0.0;
  for (const auto& g : coeffs) s += std::abs(g.a) + std::abs(g.b) + std::abs(g.c) + std::abs(g.d);
  return s > 0.0 ? s : 1.0;
}

void check_sizes(std::span<const GCoefficients> coeffs, std::size_t n,
                 const channel::ChannelParams& channel, const char* what) {
  if (coeffs.empty()) throw AllocationError(std::string(what) + ": no devices");
  if (n != coeffs.size() || channel.num_devices() != coeffs.size()) {
    throw AllocationError(std::string(what) + ": coefficient, allocation and channel sizes differ");
  }
}

/// Exponents a = H_v/(1-alpha), s = -H_s/alpha and their beta derivatives.
struct BetaExponents {
  double a = -kInf, a1 = 0.0, a2 = 0.0;
  double s = 0.0, s1 = 0.0, s2 = 0.0;
  bool modulus = false;
};

BetaExponents beta_exponents(double alpha, double beta, const channel::ChannelParams& ch,
                             std::size_t k) {
  const auto hs = channel::h_s_jet(beta, ch, k);
  BetaExponents e;
  e.s = -hs.value / alpha;
  e.s1 = -hs.d1 / alpha;
  e.s2 = -hs.d2 / alpha;
  e.modulus = alpha < 1.0;
  if (e.modulus) {
    const auto hv = channel::h_v_jet(beta, ch, k);
    const double w = 1.0 - alpha;
    e.a = hv.value / w;
    e.a1 = hv.d1 / w;
    e.a2 = hv.d2 / w;
  }
  return e;
}

/// Upper bound of one share given the floor on every other share.
double share_cap(std::size_t num_devices, double floor) {
  return std::min(1.0 - floor, 1.0 - floor * static_cast<double>(num_devices - 1));
}

void check_start(std::span<const double> beta, double floor, bool strict, const char* what) {
  double sum = 0.0;
  for (double b : beta) {
    if (!(b >= floor && b < 1.0)) {
      throw AllocationError(std::string(what) + ": starting beta outside [floor, 1)");
    }
    sum += b;
  }
  if (strict ? !(sum < 1.0) : !(sum <= 1.0 + 1e-12)) {
    throw AllocationError(std::string(what) + ": starting beta violates sum(beta) <= 1");
  }
}

}  // namespace

void AllocationPair::validate(double beta_floor) const {
  if (alpha.size() != beta.size()) throw AllocationError("allocation: size mismatch");
  double sum = 0.0;
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    if (!(alpha[k] >= 0.0 && alpha[k] <= 1.0)) {
      throw AllocationError("allocation: alpha[" + std::to_string(k) + "] outside [0, 1]");
    }
    if (!(beta[k] >= beta_floor && beta[k] < 1.0)) {
      throw AllocationError("allocation: beta[" + std::to_string(k) + "] outside [floor, 1)");
    }
    sum += beta[k];
  }
  if (!(sum <= 1.0 + 1e-12)) throw AllocationError("allocation: sum(beta) exceeds 1");
}

AllocationPair initial_allocation(std::size_t num_devices) {
  if (num_devices == 0) throw AllocationError("initial_allocation: no devices");
  AllocationPair p;
  p.alpha.assign(num_devices, 0.5);
  p.beta.assign(num_devices, (1.0 - 1e-3) / static_cast<double>(num_devices));
  return p;
}

std::string_view to_string(BandwidthMethod method) {
  return method == BandwidthMethod::kSca ? "sca" : "penalty";
}

BandwidthMethod bandwidth_method_from_string(std::string_view name) {
  if (name == "sca") return BandwidthMethod::kSca;
  if (name == "penalty") return BandwidthMethod::kPenalty;
  throw std::invalid_argument("unknown bandwidth solver '" + std::string(name) +
                              "'; valid options: sca, penalty");
}

double total_objective(std::span<const GCoefficients> coeffs, std::span<const double> alpha,
                       std::span<const double> beta, const channel::ChannelParams& channel) {
  check_sizes(coeffs, alpha.size(), channel, "total_objective");
  if (beta.size() != coeffs.size()) throw AllocationError("total_objective: size mismatch");
  double sum = 0.0;
  for (std::size_t k = 0; k < coeffs.size(); ++k) {
    sum += bound::g_value(coeffs[k], alpha[k], beta[k], channel, k);
  }
  return sum;
}

// ---------------------------------------------------------------------------
// Power split

namespace {

struct AlphaTerms {
  double a, a1, a2, s, s1, s2;
};

AlphaTerms alpha_terms(double alpha, double h_s, double h_v) {
  const double w = 1.0 - alpha;
  AlphaTerms t;
  t.a = h_v / w;
  t.a1 = h_v / (w * w);
  t.a2 = 2.0 * h_v / (w * w * w);
  t.s = -h_s / alpha;
  t.s1 = h_s / (alpha * alpha);
  t.s2 = -2.0 * h_s / (alpha * alpha * alpha);
  return t;
}

/// dG/dalpha * exp(-s) and its alpha derivative; same sign and roots as dG/dalpha
/// but free of the exp(-H_s/alpha) overflow near alpha = 0.
struct ScaledDerivative {
  double f;
  double df;
};

ScaledDerivative scaled_gprime(const GCoefficients& g, double alpha, double h_s, double h_v) {
  const AlphaTerms t = alpha_terms(alpha, h_s, h_v);
  const double ea_s = std::exp(t.a - t.s);
  const double e2a_s = std::exp(2.0 * t.a - t.s);
  const double ea = std::exp(t.a);
  const double u = t.a1 + t.s1;
  double f = 0.0;
  double second = 0.0;
  if (g.a != 0.0) {
    f += g.a * ea_s * t.a1;
    second += g.a * ea_s * (t.a1 * t.a1 + t.a2);
  }
  if (g.b != 0.0) {
    f += 2.0 * g.b * e2a_s * t.a1;
    second += g.b * e2a_s * (4.0 * t.a1 * t.a1 + 2.0 * t.a2);
  }
  if (g.c != 0.0) {
    f += g.c * ea * u;
    second += g.c * ea * (u * u + t.a2 + t.s2);
  }
  if (g.d != 0.0) {
    f += g.d * t.s1;
    second += g.d * (t.s1 * t.s1 + t.s2);
  }
  return {f, second - f * t.s1};
}

std::vector<double> scan_grid() {
  std::vector<double> x;
  for (int e = -12; e <= -2; ++e) x.push_back(std::pow(10.0, e));
  for (int j = 1; j < 64; ++j) x.push_back(j / 64.0);
  for (int e = 2; e <= 12; ++e) x.push_back(1.0 - std::pow(10.0, -e));
  std::sort(x.begin(), x.end());
  x.erase(std::unique(x.begin(), x.end()), x.end());
  return x;
}

const std::vector<double>& grid() {
  static const std::vector<double> g = scan_grid();
  return g;
}

/// Safeguarded Newton on the scaled derivative inside [lo, hi] with a sign change.
double refine_root(const GCoefficients& g, double h_s, double h_v, double lo, double hi,
                   double f_lo) {
  double x = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const auto [f, df] = scaled_gprime(g, x, h_s, h_v);
    if (f == 0.0) return x;
    if ((f < 0.0) == (f_lo < 0.0)) {
      lo = x;
    } else {
      hi = x;
    }
    double next = x - f / df;
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    if (std::abs(next - x) <= 4.0 * std::numeric_limits<double>::epsilon() * x ||
        hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * hi) {
      return next;
    }
    x = next;
  }
  return x;
}

}  // namespace

double gprime_from_exponents(const GCoefficients& g, double alpha, double h_s, double h_v) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::domain_error("gprime: alpha must lie in (0, 1)");
  const AlphaTerms t = alpha_terms(alpha, h_s, h_v);
  double r = 0.0;
  if (g.a != 0.0) r += g.a * std::exp(t.a) * t.a1;
  if (g.b != 0.0) r += 2.0 * g.b * std::exp(2.0 * t.a) * t.a1;
  if (g.c != 0.0) r += g.c * std::exp(t.a + t.s) * (t.a1 + t.s1);
  if (g.d != 0.0) r += g.d * std::exp(t.s) * t.s1;
  return r;
}

double gsecond_from_exponents(const GCoefficients& g, double alpha, double h_s, double h_v) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::domain_error("gprime: alpha must lie in (0, 1)");
  const AlphaTerms t = alpha_terms(alpha, h_s, h_v);
  const double u = t.a1 + t.s1;
  double r = 0.0;
  if (g.a != 0.0) r += g.a * std::exp(t.a) * (t.a1 * t.a1 + t.a2);
  if (g.b != 0.0) r += g.b * std::exp(2.0 * t.a) * (4.0 * t.a1 * t.a1 + 2.0 * t.a2);
  if (g.c != 0.0) r += g.c * std::exp(t.a + t.s) * (u * u + t.a2 + t.s2);
  if (g.d != 0.0) r += g.d * std::exp(t.s) * (t.s1 * t.s1 + t.s2);
  return r;
}

double gprime(const GCoefficients& g, double alpha, double beta,
              const channel::ChannelParams& channel, std::size_t device) {
  return gprime_from_exponents(g, alpha, channel::h_s(beta, channel, device),
                               channel::h_v(beta, channel, device));
}

double g_beta_derivative(const GCoefficients& g, double alpha, double beta,
                         const channel::ChannelParams& channel, std::size_t device) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw std::domain_error("g_beta_derivative: alpha must lie in (0, 1]");
  }
  const BetaExponents e = beta_exponents(alpha, beta, channel, device);
  double r = 0.0;
  if (g.d != 0.0) r += g.d * std::exp(e.s) * e.s1;
  if (!e.modulus) return r;
  if (g.a != 0.0) r += g.a * std::exp(e.a) * e.a1;
  if (g.b != 0.0) r += 2.0 * g.b * std::exp(2.0 * e.a) * e.a1;
  if (g.c != 0.0) r += g.c * std::exp(e.a + e.s) * (e.a1 + e.s1);
  return r;
}

PowerSolution optimize_power_device(const GCoefficients& g, double h_s, double h_v) {
  if (!(h_s <= 0.0) || !(h_v <= 0.0)) {
    throw AllocationError("optimize_power: outage exponents must be finite and <= 0");
  }
  PowerSolution sol;
  const auto& xs = grid();
  std::vector<double> fs(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) fs[i] = scaled_gprime(g, xs[i], h_s, h_v).f;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (fs[i] == 0.0) {
      sol.roots.push_back(xs[i]);
      continue;
    }
    if (i + 1 < xs.size() && fs[i + 1] != 0.0 && ((fs[i] < 0.0) != (fs[i + 1] < 0.0)) &&
        std::isfinite(fs[i]) && std::isfinite(fs[i + 1])) {
      sol.roots.push_back(refine_root(g, h_s, h_v, xs[i], xs[i + 1], fs[i]));
    }
  }

  sol.alpha = 1.0;
  sol.g_value = bound::g_from_exponents(g, 1.0, h_s, h_v);
  const double tie = 1e-12;
  for (double x : sol.roots) {
    sol.max_root_residual =
        std::max(sol.max_root_residual, std::abs(gprime_from_exponents(g, x, h_s, h_v)));
    const double v = bound::g_from_exponents(g, x, h_s, h_v);
    if (!std::isfinite(v)) continue;
    const double margin = tie * std::max(1.0, std::abs(sol.g_value));
    if (v < sol.g_value - margin || (std::abs(v - sol.g_value) <= margin && x < sol.alpha)) {
      sol.alpha = x;
      sol.g_value = v;
    }
  }
  return sol;
}

std::vector<double> optimize_power(std::span<const GCoefficients> coeffs,
                                   std::span<const double> beta,
                                   const channel::ChannelParams& channel,
                                   std::vector<double>* residuals) {
  check_sizes(coeffs, beta.size(), channel, "optimize_power");
  std::vector<double> alpha(coeffs.size());
  if (residuals) residuals->assign(coeffs.size(), 0.0);
  for (std::size_t k = 0; k < coeffs.size(); ++k) {
    if (!(beta[k] > 0.0 && beta[k] < 1.0)) {
      throw AllocationError("optimize_power: beta[" + std::to_string(k) + "] outside (0, 1)");
    }
    const auto sol = optimize_power_device(coeffs[k], channel::h_s(beta[k], channel, k),
                                           channel::h_v(beta[k], channel, k));
    alpha[k] = sol.alpha;
    if (residuals) (*residuals)[k] = sol.max_root_residual;
  }
  return alpha;
}

// ---------------------------------------------------------------------------
// Bandwidth: successive convex approximation

namespace {

/// Convex per-device surrogate anchored at beta0. Terms with positive weight
/// keep the linearized modulus exponent inside exp(); terms with negative
/// weight use the tangent lower bound of exp() at the anchor.
struct Surrogate {
  GCoefficients g;
  double alpha = 0.5;
  bool modulus = true;
  int kind = 1;
  double beta0 = 0.0;
  double a0 = 0.0, a0p = 0.0;
  double s0 = 0.0, s0p = 0.0;
  double y0 = 0.0, z0 = 0.0;
};

int device_case(const GCoefficients& g) {
  if (g.a >= 0.0) return g.c >= 0.0 ? 1 : 2;
  return g.c >= 0.0 ? 3 : 4;
}

Surrogate anchor(const GCoefficients& g, double alpha, double beta0,
                 const channel::ChannelParams& ch, std::size_t k) {
  Surrogate su;
  su.g = g;
  su.alpha = alpha;
  su.modulus = alpha < 1.0;
  su.kind = device_case(g);
  su.beta0 = beta0;
  const BetaExponents e = beta_exponents(alpha, beta0, ch, k);
  su.s0 = e.s;
  su.s0p = e.s1;
  if (su.modulus) {
    su.a0 = e.a;
    su.a0p = e.a1;
    su.y0 = std::exp(e.a);
    su.z0 = std::exp(e.a + e.s);
  }
  return su;
}

struct Jet {
  double v = 0.0, d1 = 0.0, d2 = 0.0;
};

Jet surrogate_jet(const Surrogate& su, double beta, const channel::ChannelParams& ch,
                  std::size_t k) {
  const BetaExponents e = beta_exponents(su.alpha, beta, ch, k);
  const auto& g = su.g;
  Jet j;
  if (g.d != 0.0) {
    const double ex = std::exp(e.s);
    j.v += g.d * ex;
    j.d1 += g.d * ex * e.s1;
    j.d2 += g.d * ex * (e.s1 * e.s1 + e.s2);
  }
  if (!su.modulus) return j;
  const double la = su.a0 + su.a0p * (beta - su.beta0);
  if (g.a > 0.0) {
    const double ex = std::exp(la);
    j.v += g.a * ex;
    j.d1 += g.a * ex * su.a0p;
    j.d2 += g.a * ex * su.a0p * su.a0p;
  } else if (g.a < 0.0) {
    j.v += g.a * su.y0 * (1.0 + e.a - su.a0);
    j.d1 += g.a * su.y0 * e.a1;
    j.d2 += g.a * su.y0 * e.a2;
  }
  if (g.b != 0.0) {
    const double ex = std::exp(2.0 * la);
    j.v += g.b * ex;
    j.d1 += 2.0 * g.b * ex * su.a0p;
    j.d2 += 4.0 * g.b * ex * su.a0p * su.a0p;
  }
  if (g.c > 0.0) {
    const double ex = std::exp(la + e.s);
    const double u = su.a0p + e.s1;
    j.v += g.c * ex;
    j.d1 += g.c * ex * u;
    j.d2 += g.c * ex * (u * u + e.s2);
  } else if (g.c < 0.0) {
    const double ls = su.s0 + su.s0p * (beta - su.beta0);
    j.v += g.c * su.z0 * (1.0 + e.a + ls - su.a0 - su.s0);
    j.d1 += g.c * su.z0 * (e.a1 + su.s0p);
    j.d2 += g.c * su.z0 * e.a2;
  }
  if (std::isnan(j.d1)) j.d1 = -kInf;
  return j;
}

/// argmin over [lo, hi] of surrogate + lambda * beta (convex in beta).
double solve_device(const Surrogate& su, double lambda, double lo, double hi, double guess,
                    const channel::ChannelParams& ch, std::size_t k, double* curvature) {
  *curvature = kInf;
  const double f_lo = surrogate_jet(su, lo, ch, k).d1 + lambda;
  if (f_lo >= 0.0) return lo;
  const double f_hi = surrogate_jet(su, hi, ch, k).d1 + lambda;
  if (f_hi <= 0.0) return hi;
  double x = std::clamp(guess, lo, hi);
  if (x == lo || x == hi) x = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const Jet j = surrogate_jet(su, x, ch, k);
    const double f = j.d1 + lambda;
    *curvature = j.d2;
    if (f == 0.0) return x;
    if (f < 0.0) {
      lo = x;
    } else {
      hi = x;
    }
    double next = x - f / j.d2;
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    if (std::abs(next - x) <= 2.0 * std::numeric_limits<double>::epsilon() * x ||
        hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * hi) {
      return next;
    }
    x = next;
  }
  return x;
}

struct DualSolution {
  std::vector<double> beta;
  double lambda = 0.0;
  double kkt = 0.0;
};

/// Minimizes sum_k surrogate_k(beta_k) s.t. sum(beta) <= 1 and per-device box
/// bounds through a scalar search on the multiplier of the sum constraint.
DualSolution solve_surrogate(const std::vector<Surrogate>& sus, std::span<const double> guess,
                             double lo, double hi, const channel::ChannelParams& ch) {
  const std::size_t n = sus.size();
  DualSolution out;
  std::vector<double> beta(guess.begin(), guess.end());
  std::vector<double> curv(n);
  auto evaluate = [&](double lambda, double* slope) {
    double sum = 0.0;
    double d = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      beta[k] = solve_device(sus[k], lambda, lo, hi, beta[k], ch, k, &curv[k]);
      sum += beta[k];
      if (beta[k] > lo && beta[k] < hi && curv[k] > 0.0 && std::isfinite(curv[k])) {
        d -= 1.0 / curv[k];
      }
    }
    if (slope) *slope = d;
    return sum;
  };

  double slope = 0.0;
  double sum = evaluate(0.0, &slope);
  if (sum <= 1.0) {
    out.beta = beta;
    out.lambda = 0.0;
  } else {
    double lam_lo = 0.0;
    double lam_hi = 1.0;
    std::vector<double> best_beta;
    for (int i = 0; i < 700; ++i) {
      const double s = evaluate(lam_hi, nullptr);
      if (s <= 1.0) {
        best_beta = beta;
        break;
      }
      lam_lo = lam_hi;
      lam_hi *= 4.0;
    }
    if (best_beta.empty()) throw AllocationError("bandwidth solve: multiplier search diverged");
    double best_lambda = lam_hi;
    double lam = lam_hi;
    for (int it = 0; it < 300; ++it) {
      sum = evaluate(lam, &slope);
      if (sum <= 1.0) {
        lam_hi = lam;
        best_beta = beta;
        best_lambda = lam;
        if (1.0 - sum <= 1e-14) break;
      } else {
        lam_lo = lam;
      }
      if (lam_hi - lam_lo <= 1e-15 * lam_hi) break;
      double next = slope < 0.0 ? lam - (sum - 1.0) / slope : -1.0;
      if (!(next > lam_lo && next < lam_hi) || !std::isfinite(next)) {
        next = (lam_lo > 0.0 && lam_hi / lam_lo > 4.0) ? std::sqrt(lam_lo * lam_hi)
                                                        : 0.5 * (lam_lo + lam_hi);
      }
      lam = next;
    }
    out.beta = best_beta;
    out.lambda = best_lambda;
  }

  // Stationarity of the Lagrangian, projected onto the box, plus slackness.
  double total = 0.0;
  for (double b : out.beta) total += b;
  double kkt = out.lambda * std::max(0.0, 1.0 - total);
  for (std::size_t k = 0; k < n; ++k) {
    const Jet j = surrogate_jet(sus[k], out.beta[k], ch, k);
    const double grad = j.d1 + out.lambda;
    const double scale = std::max({1.0, out.lambda, std::abs(j.d1)});
    double r = std::abs(grad);
    if (out.beta[k] <= lo) r = std::max(0.0, -grad);
    if (out.beta[k] >= hi) r = std::max(0.0, grad);
    kkt = std::max(kkt, r / scale);
  }
  out.kkt = kkt;
  return out;
}

}  // namespace

ScaResult optimize_bandwidth_sca(std::span<const GCoefficients> coeffs,
                                 std::span<const double> alpha,
                                 const channel::ChannelParams& channel,
                                 std::span<const double> beta_start, const ScaOptions& opts) {
  check_sizes(coeffs, alpha.size(), channel, "optimize_bandwidth_sca");
  if (beta_start.size() != coeffs.size()) throw AllocationError("optimize_bandwidth_sca: size mismatch");
  for (double a : alpha) {
    if (!(a > 0.0 && a <= 1.0)) throw AllocationError("optimize_bandwidth_sca: alpha outside (0, 1]");
  }
  check_start(beta_start, opts.beta_floor, false, "optimize_bandwidth_sca");
  const std::size_t n = coeffs.size();
  const double lo = opts.beta_floor;
  const double hi = share_cap(n, lo);
  const double scale = coefficient_scale(coeffs);

  ScaResult res;
  res.beta.assign(beta_start.begin(), beta_start.end());
  for (auto& b : res.beta) b = std::clamp(b, lo, hi);
  double objective = total_objective(coeffs, alpha, res.beta, channel);
  if (!std::isfinite(objective)) {
    throw AllocationError("optimize_bandwidth_sca: objective is not finite at the start");
  }
  res.objective_trace.push_back(objective);
  std::vector<Surrogate> sus(n);
  bool converged = false;
  for (std::size_t r = 1; r <= opts.max_iterations; ++r) {
    for (std::size_t k = 0; k < n; ++k) sus[k] = anchor(coeffs[k], alpha[k], res.beta[k], channel, k);
    DualSolution dual = solve_surrogate(sus, res.beta, lo, hi, channel);
    const double next = total_objective(coeffs, alpha, dual.beta, channel);
    res.iterations = r;
    res.kkt_residual = dual.kkt;
    res.multiplier = dual.lambda;
    if (!(next <= objective)) {
      // No further descent at working precision: the anchor is a fixed point.
      converged = true;
      break;
    }
    const double gain = objective - next;
    res.beta = std::move(dual.beta);
    objective = next;
    res.objective_trace.push_back(objective);
    if (gain <= opts.tol * scale) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw AllocationError("optimize_bandwidth_sca: no convergence within " +
                          std::to_string(opts.max_iterations) + " iterations (objective " +
                          std::to_string(objective) + ")");
  }

  res.t.assign(n, 0.0);
  res.y.assign(n, 0.0);
  res.z.assign(n, 0.0);
  res.cases.assign(n, 0);
  for (std::size_t k = 0; k < n; ++k) {
    const Surrogate& su = sus[k];
    res.cases[k] = su.kind;
    if (!su.modulus) continue;
    const BetaExponents e = beta_exponents(alpha[k], res.beta[k], channel, k);
    res.t[k] = su.a0 + su.a0p * (res.beta[k] - su.beta0);
    res.y[k] = su.y0 * (1.0 + e.a - su.a0);
    const double ls = su.s0 + su.s0p * (res.beta[k] - su.beta0);
    res.z[k] = su.z0 * (1.0 + e.a + ls - su.a0 - su.s0);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Bandwidth: interior-point penalty

namespace {

struct PenaltyProblem {
  std::span<const GCoefficients> coeffs;
  std::span<const double> alpha;
  const channel::ChannelParams& ch;
  double inv_scale;
  double floor;

  bool inside(const std::vector<double>& b) const {
    double sum = 0.0;
    for (double v : b) {
      if (!(v >= floor && v < 1.0)) return false;
      sum += v;
    }
    return sum < 1.0;
  }

  double value(const std::vector<double>& b, double mu) const {
    if (!inside(b)) return kInf;
    double g = 0.0;
    double barrier = 0.0;
    double sum = 0.0;
    for (std::size_t k = 0; k < b.size(); ++k) {
      g += bound::g_value(coeffs[k], alpha[k], b[k], ch, k);
      barrier += std::log10(b[k]) + std::log10(1.0 - b[k]);
      sum += b[k];
    }
    barrier += std::log10(1.0 - sum);
    return g * inv_scale - barrier / mu;
  }

  void gradient(const std::vector<double>& b, double mu, std::vector<double>& out) const {
    double sum = 0.0;
    for (double v : b) sum += v;
    const double shared = 1.0 / (1.0 - sum);
    const double c = 1.0 / (mu * std::numbers::ln10);
    for (std::size_t k = 0; k < b.size(); ++k) {
      const double dg = g_beta_derivative(coeffs[k], alpha[k], b[k], ch, k);
      out[k] = dg * inv_scale - c * (1.0 / b[k] - 1.0 / (1.0 - b[k]) - shared);
    }
  }
};

double projected_step_norm(const std::vector<double>& b, const std::vector<double>& grad,
                           double floor) {
  double m = 0.0;
  for (std::size_t k = 0; k < b.size(); ++k) {
    const double moved = std::max(floor, b[k] - grad[k]);
    m = std::max(m, std::abs(moved - b[k]));
  }
  return m;
}

}  // namespace

PenaltyResult optimize_bandwidth_penalty(std::span<const GCoefficients> coeffs,
                                         std::span<const double> alpha,
                                         const channel::ChannelParams& channel,
                                         std::span<const double> beta_start,
                                         const PenaltyOptions& opts) {
  check_sizes(coeffs, alpha.size(), channel, "optimize_bandwidth_penalty");
  if (beta_start.size() != coeffs.size()) {
    throw AllocationError("optimize_bandwidth_penalty: size mismatch");
  }
  for (double a : alpha) {
    if (!(a > 0.0 && a <= 1.0)) {
      throw AllocationError("optimize_bandwidth_penalty: alpha outside (0, 1]");
    }
  }
  if (opts.mu_schedule.empty()) throw AllocationError("optimize_bandwidth_penalty: empty schedule");
  check_start(beta_start, opts.beta_floor, true, "optimize_bandwidth_penalty");

  const std::size_t n = coeffs.size();
  PenaltyProblem prob{coeffs, alpha, channel, 1.0 / coefficient_scale(coeffs), opts.beta_floor};
  PenaltyResult res;
  std::vector<double> x(beta_start.begin(), beta_start.end());
  std::vector<double> grad(n), prev_x(n), prev_grad(n), trial(n);

  for (double mu : opts.mu_schedule) {
    double fx = prob.value(x, mu);
    if (!std::isfinite(fx)) {
      throw AllocationError("optimize_bandwidth_penalty: objective is not finite at the start");
    }
    prob.gradient(x, mu, grad);
    double gmax = 0.0;
    for (double v : grad) gmax = std::max(gmax, std::abs(v));
    double step = 1e-3 / std::max(1e-12, gmax);
    bool have_prev = false;
    for (std::size_t it = 0; it < opts.max_iterations_per_stage; ++it) {
      if (projected_step_norm(x, grad, opts.beta_floor) <= opts.tol) break;
      if (have_prev) {
        double ss = 0.0;
        double sy = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double s = x[k] - prev_x[k];
          const double y = grad[k] - prev_grad[k];
          ss += s * s;
          sy += s * y;
        }
        if (sy > 0.0 && std::isfinite(ss / sy)) step = ss / sy;
      }
      bool accepted = false;
      double f_trial = fx;
      for (std::size_t h = 0; h <= opts.max_halvings; ++h) {
        double decrease = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          trial[k] = std::max(opts.beta_floor, x[k] - step * grad[k]);
          decrease += grad[k] * (trial[k] - x[k]);
        }
        f_trial = prob.value(trial, mu);
        if (std::isfinite(f_trial) && f_trial <= fx + 1e-4 * decrease) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      ++res.iterations;
      if (!accepted) {
        if (projected_step_norm(x, grad, opts.beta_floor) > 1e-6) {
          throw AllocationError("optimize_bandwidth_penalty: line search failed at mu = " +
                                std::to_string(mu));
        }
        break;
      }
      if (f_trial > fx) res.monotone_within_stages = false;
      const double change = fx - f_trial;
      prev_x = x;
      prev_grad = grad;
      have_prev = true;
      x = trial;
      fx = f_trial;
      prob.gradient(x, mu, grad);
      if (change <= 1e-16 * std::max(1.0, std::abs(fx))) break;
    }
    res.stage_objectives.push_back(fx);
  }
  res.beta = std::move(x);
  return res;
}

// ---------------------------------------------------------------------------
// Alternation

AllocationResult alternate(std::span<const GCoefficients> coeffs,
                           const channel::ChannelParams& channel, const AlternateOptions& opts) {
  check_sizes(coeffs, coeffs.size(), channel, "alternate");
  const std::size_t n = coeffs.size();
  AllocationResult res;
  auto& diag = res.diagnostics;
  diag.method = opts.method;

  AllocationPair current = initial_allocation(n);
  double objective = total_objective(coeffs, current.alpha, current.beta, channel);
  diag.objective_trace.push_back(objective);
  res.allocation = current;
  res.objective = objective;

  bool converged = false;
  for (std::size_t outer = 1; outer <= opts.max_outer; ++outer) {
    diag.outer_iterations = outer;
    std::vector<double> residuals;
    current.alpha = optimize_power(coeffs, current.beta, channel, &residuals);
    const double after_power = total_objective(coeffs, current.alpha, current.beta, channel);
    diag.root_residuals = residuals;

    std::vector<double> beta_next;
    try {
      if (opts.method == BandwidthMethod::kSca) {
        ScaResult sca = optimize_bandwidth_sca(coeffs, current.alpha, channel, current.beta, opts.sca);
        diag.inner_iterations += sca.iterations;
        diag.kkt_residual = sca.kkt_residual;
        diag.sca_cases = sca.cases;
        beta_next = std::move(sca.beta);
      } else {
        PenaltyResult pen =
            optimize_bandwidth_penalty(coeffs, current.alpha, channel, current.beta, opts.penalty);
        diag.inner_iterations += pen.iterations;
        beta_next = std::move(pen.beta);
      }
    } catch (const AllocationError& e) {
      diag.warning = e.what();
    }

    double next = after_power;
    bool stop = !diag.warning.empty();
    if (!beta_next.empty()) {
      const double candidate = total_objective(coeffs, current.alpha, beta_next, channel);
      if (candidate <= after_power) {
        current.beta = std::move(beta_next);
        next = candidate;
      } else {
        stop = true;
      }
    }
    if (next <= res.objective || !std::isfinite(res.objective)) {
      res.allocation = current;
      res.objective = next;
    }
    diag.objective_trace.push_back(res.objective);
    const double change = std::abs(objective - res.objective);
    objective = res.objective;
    if (stop || (std::isfinite(change) && change <= opts.tol * std::max(1.0, std::abs(objective)))) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    diag.hit_iteration_cap = true;
    if (diag.warning.empty()) diag.warning = "alternation reached the iteration cap";
  }
  return res;
}

}  // namespace spfl::allocator
