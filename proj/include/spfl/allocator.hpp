#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "spfl/bound.hpp"
#include "spfl/channel.hpp"

namespace spfl::allocator {

using bound::GCoefficients;

inline constexpr double kBetaFloor = 1e-4;
inline constexpr double kGamma1 = 1e-8;  // root residual tolerance
inline constexpr double kGamma2 = 1e-6;  // inner KKT tolerance

class AllocationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AllocationPair {
  std::vector<double> alpha;
  std::vector<double> beta;

  /// Throws AllocationError unless 0 <= alpha <= 1, beta >= floor and
  /// sum(beta) <= 1 + 1e-12.
  void validate(double beta_floor = kBetaFloor) const;
};

/// alpha = 0.5 and beta = (1 - 1e-3) / K for every device.
AllocationPair initial_allocation(std::size_t num_devices);

enum class BandwidthMethod { kSca, kPenalty };
std::string_view to_string(BandwidthMethod method);
BandwidthMethod bandwidth_method_from_string(std::string_view name);

struct SolverDiagnostics {
  BandwidthMethod method = BandwidthMethod::kSca;
  std::size_t outer_iterations = 0;
  std::size_t inner_iterations = 0;
  std::vector<double> objective_trace;
  std::vector<double> root_residuals;
  /// Device case (1..4) from the signs of A and C, last bandwidth solve.
  std::vector<int> sca_cases;
  double kkt_residual = 0.0;
  bool hit_iteration_cap = false;
  std::string warning;
};

/// Sum over devices of G(alpha_k, beta_k).
double total_objective(std::span<const GCoefficients> coeffs, std::span<const double> alpha,
                       std::span<const double> beta, const channel::ChannelParams& channel);

/// dG/dalpha and d2G/dalpha2 at fixed exponents h_s = H_s(beta), h_v = H_v(beta).
double gprime_from_exponents(const GCoefficients& g, double alpha, double h_s, double h_v);
double gsecond_from_exponents(const GCoefficients& g, double alpha, double h_s, double h_v);

/// dG/dalpha at (alpha, beta). Throws std::domain_error unless 0 < alpha < 1.
double gprime(const GCoefficients& g, double alpha, double beta,
              const channel::ChannelParams& channel, std::size_t device);

/// dG/dbeta at fixed alpha in (0, 1].
double g_beta_derivative(const GCoefficients& g, double alpha, double beta,
                         const channel::ChannelParams& channel, std::size_t device);

struct PowerSolution {
  double alpha = 1.0;
  double g_value = 0.0;
  /// Stationary points found in (0, 1), ascending.
  std::vector<double> roots;
  /// Largest |dG/dalpha| over the returned roots.
  double max_root_residual = 0.0;
};

/// Minimizes G over alpha in (0, 1] for fixed exponents: every sign change of
/// dG/dalpha on a scan grid is refined by safeguarded Newton, and the best of
/// {roots, 1} wins, ties going to the smallest alpha.
PowerSolution optimize_power_device(const GCoefficients& g, double h_s, double h_v);

/// Per-device optimal alpha at fixed beta. Throws AllocationError if any beta
/// lies outside (0, 1). Writes per-device root residuals when requested.
std::vector<double> optimize_power(std::span<const GCoefficients> coeffs,
                                   std::span<const double> beta,
                                   const channel::ChannelParams& channel,
                                   std::vector<double>* residuals = nullptr);

struct ScaOptions {
  std::size_t max_iterations = 500;
  /// Stop once an iteration improves the objective by less than
  /// tol * sum(|A| + B + |C| + D).
  double tol = 1e-12;
  double beta_floor = kBetaFloor;
};

struct ScaResult {
  std::vector<double> beta;
  /// Auxiliary variables at the final surrogate solution.
  std::vector<double> t;
  std::vector<double> y;
  std::vector<double> z;
  std::vector<int> cases;
  std::vector<double> objective_trace;
  std::size_t iterations = 0;
  double kkt_residual = 0.0;
  double multiplier = 0.0;
};

/// Successive convex approximation of the bandwidth subproblem at fixed alpha.
/// Throws AllocationError on an infeasible start or when the iteration cap is
/// reached before the objective settles.
ScaResult optimize_bandwidth_sca(std::span<const GCoefficients> coeffs,
                                 std::span<const double> alpha,
                                 const channel::ChannelParams& channel,
                                 std::span<const double> beta_start, const ScaOptions& opts = {});

struct PenaltyOptions {
  std::vector<double> mu_schedule{1e2, 1e3, 1e4, 1e5};
  std::size_t max_iterations_per_stage = 20000;
  std::size_t max_halvings = 60;
  double tol = 1e-12;
  double beta_floor = kBetaFloor;
};

struct PenaltyResult {
  std::vector<double> beta;
  std::size_t iterations = 0;
  /// Penalized objective at the end of each stage.
  std::vector<double> stage_objectives;
  /// True when the penalized objective never increased within a stage.
  bool monotone_within_stages = true;
};

/// Log-barrier penalty method: projected gradient descent with Armijo
/// backtracking and Barzilai-Borwein trial steps, warm-started across the
/// mu schedule. G is scaled by 1 / sum(|A| + B + |C| + D) so one schedule fits
/// every instance. Throws AllocationError on an infeasible start or when the
/// line search fails away from a stationary point.
PenaltyResult optimize_bandwidth_penalty(std::span<const GCoefficients> coeffs,
                                         std::span<const double> alpha,
                                         const channel::ChannelParams& channel,
                                         std::span<const double> beta_start,
                                         const PenaltyOptions& opts = {});

struct AlternateOptions {
  BandwidthMethod method = BandwidthMethod::kSca;
  double tol = 1e-9;
  std::size_t max_outer = 100;
  ScaOptions sca;
  PenaltyOptions penalty;
};

struct AllocationResult {
  AllocationPair allocation;
  SolverDiagnostics diagnostics;
  double objective = 0.0;
};

/// Alternates optimize_power and the chosen bandwidth solver from the
/// initial allocation until the objective changes by less than
/// tol * max(1, |objective|). A bandwidth step that would raise the objective
/// is rejected and ends the loop. On the iteration cap or a solver failure
/// the best iterate is returned with hit_iteration_cap / warning set.
AllocationResult alternate(std::span<const GCoefficients> coeffs,
                           const channel::ChannelParams& channel,
                           const AlternateOptions& opts = {});

}  // namespace spfl::allocator
