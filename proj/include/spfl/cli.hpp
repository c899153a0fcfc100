#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "spfl/allocator.hpp"
#include "spfl/learner.hpp"

namespace spfl::cli {

/// Environment variable naming the default output directory of `run`.
inline constexpr const char* kOutputDirEnv = "SPFL_OUTPUT_DIR";

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SweepAxis { kNone, kPower, kLatency, kDevices, kBits, kDirichlet };
std::string_view to_string(SweepAxis axis);
SweepAxis sweep_axis_from_string(std::string_view name);

/// One experiment: a grid of (strategy, sweep value) cells, each run for
/// `repetitions` independent repetitions. Powers and noise are kept in the
/// units a user writes (dBm, dBm/Hz) and converted to watts when a cell's
/// learner config is built.
struct ExperimentConfig {
  // Channel
  std::size_t devices = 20;
  double bandwidth_hz = 10e6;
  double noise_psd_dbm_hz = -174.0;
  double pathloss_exponent = 3.0;
  double tx_power_dbm = -4.0;
  double latency_s = 0.5;
  unsigned quant_bits = 3;
  unsigned range_bits = 64;
  /// Devices are placed uniformly over the annulus [distance_min_m, cell_radius_m].
  double distance_min_m = 10.0;
  double cell_radius_m = 500.0;

  // Learning
  std::size_t rounds = 30;
  std::size_t repetitions = 3;
  std::uint64_t seed = 1;
  std::vector<learner::Strategy> strategies{
      learner::Strategy::kSpfl, learner::Strategy::kErrorFree, learner::Strategy::kDds,
      learner::Strategy::kScheduling, learner::Strategy::kOneBit};
  aggregation::CompensationKind compensation =
      aggregation::CompensationKind::kPreviousGlobalModulus;
  unsigned retransmit_limit = 0;
  allocator::BandwidthMethod solver = allocator::BandwidthMethod::kSca;
  double solver_tol = 1e-4;
  learner::DeltaSource delta_source = learner::DeltaSource::kBound;
  learner::DeliveryMode delivery = learner::DeliveryMode::kBernoulli;
  double scheduling_fraction = 0.75;
  double eta = 0.05;
  double lipschitz = 0.0;

  // Data and model
  learner::PartitionScheme partition = learner::PartitionScheme::kDirichlet;
  double dirichlet = 0.5;
  std::size_t shard_size = 100;
  learner::ModelKind model = learner::ModelKind::kLogistic;
  std::size_t hidden = 16;
  std::size_t classes = 10;
  std::size_t features = 20;
  double class_separation = 3.0;
  double noise_std = 1.0;
  double noise_spread = 1.0;
  double feature_scale = 1.0;
  bool rotate_noise = true;
  std::size_t test_size = 2000;

  // Sweep
  SweepAxis sweep_axis = SweepAxis::kNone;
  std::vector<double> sweep_values;

  /// Throws ConfigError naming the offending field.
  void validate() const;

  /// Values the experiment iterates over; a single NaN when there is no sweep.
  std::vector<double> sweep_grid() const;
};

/// Parses `key = value` lines; `#` starts a comment. Omitted keys keep their
/// defaults. Throws ConfigError with the line number and key on any problem.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Every key in a fixed order, one per line. parse_config(serialize(c)) == c.
std::string serialize(const ExperimentConfig& cfg);

/// 64-bit FNV-1a of the serialized config.
std::uint64_t config_hash(const ExperimentConfig& cfg);
std::string hash_hex(std::uint64_t hash);

/// Device distances for `num_devices` devices; device k's position depends
/// only on (seed, k).
std::vector<double> place_devices(const ExperimentConfig& cfg, std::size_t num_devices);

/// Learner config of one sweep cell (NaN sweep value = no override).
learner::LearnerConfig learner_config(const ExperimentConfig& cfg, double sweep_value);

double dbm_to_watts(double dbm);

struct CellResult {
  learner::Strategy strategy = learner::Strategy::kSpfl;
  double sweep_value = 0.0;
  /// Rows ordered by (repetition, round).
  std::vector<learner::RoundMetrics> rows;

  /// Final-round test accuracy of each repetition.
  std::vector<double> final_accuracy() const;
  std::vector<double> final_loss() const;
};

struct ExperimentResult {
  std::uint64_t hash = 0;
  std::uint64_t seed = 0;
  std::vector<CellResult> cells;  // sweep value major, strategy minor

  const CellResult& cell(learner::Strategy strategy, double sweep_value) const;
};

/// Runs every cell, at most `workers` at a time. Output does not depend on
/// `workers`.
ExperimentResult run_experiment(const ExperimentConfig& cfg, std::size_t workers = 1);

inline constexpr std::string_view kCsvColumns =
    "strategy,sweep_value,repetition,round,elapsed_s,train_loss,test_acc,bound_value,mean_q,"
    "mean_p,devices_rejected,solver_outer_iters";

/// First line of every output file.
std::string header_line(std::uint64_t hash, std::uint64_t seed);

std::string metrics_csv(const ExperimentResult& result, const CellResult& cell);
std::string summary_csv(const ExperimentResult& result);

/// metrics_<strategy>[_<axis>_<value>].csv
std::string metrics_file_name(const ExperimentConfig& cfg, const CellResult& cell);

/// Writes one metrics file per cell plus summary.csv; returns the paths written.
std::vector<std::filesystem::path> write_outputs(const ExperimentConfig& cfg,
                                                 const ExperimentResult& result,
                                                 const std::filesystem::path& dir);

/// Directory from kOutputDirEnv, or "spfl_out" when unset.
std::filesystem::path default_output_dir();

/// Shortest round-trip decimal form; "nan", "inf" and "-inf" for non-finite values.
std::string format_double(double v);

/// Allocation problem read by the `solve` subcommand.
struct SolveProblem {
  channel::ChannelParams channel;
  std::vector<bound::GCoefficients> coefficients;
  allocator::BandwidthMethod method = allocator::BandwidthMethod::kSca;
  double tol = 1e-9;
};

/// Key-value header (bandwidth_hz, noise_psd_dbm_hz, pathloss_exponent,
/// latency_s, model_dim, quant_bits, range_bits, solver, tol) followed by one
/// `device = A B C D distance_m tx_power_dbm` line per device.
SolveProblem parse_coefficients(std::string_view text);
SolveProblem load_coefficients(const std::filesystem::path& path);

std::string format_solution(const SolveProblem& problem,
                            const allocator::AllocationResult& result);

}  // namespace spfl::cli
