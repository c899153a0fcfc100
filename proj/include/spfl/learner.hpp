#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spfl/aggregation.hpp"
#include "spfl/allocator.hpp"
#include "spfl/bound.hpp"
#include "spfl/channel.hpp"

namespace spfl::learner {

using Vector = std::vector<double>;

// ---------------------------------------------------------------------------
// Data

struct Dataset {
  std::size_t num_features = 0;
  std::size_t num_classes = 0;
  Vector features;  // row-major, size() x num_features
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const {
    return {features.data() + i * num_features, num_features};
  }
};

/// Gaussian mixture: class means are drawn with norm `class_separation`,
/// noise axis j has standard deviation noise_std * noise_spread^(j / (d - 1) - 1/2),
/// and every feature is multiplied by feature_scale. With rotate_noise the
/// noise axes form a random orthonormal basis instead of the coordinate axes.
struct DatasetSpec {
  std::size_t num_classes = 10;
  std::size_t num_features = 20;
  double class_separation = 3.0;
  double noise_std = 1.0;
  double noise_spread = 1.0;
  double feature_scale = 1.0;
  bool rotate_noise = true;
  std::size_t test_size = 2000;
};

/// Balanced train and test sets drawn from one mixture.
struct DataSplit {
  Dataset train;
  Dataset test;
};
DataSplit make_gaussian_mixture(const DatasetSpec& spec, std::size_t train_size,
                                std::uint64_t seed, std::uint64_t repetition);

enum class PartitionScheme { kIid, kDirichlet };
std::string_view to_string(PartitionScheme scheme);
PartitionScheme partition_scheme_from_string(std::string_view name);

struct Partition {
  std::vector<std::vector<std::size_t>> shards;
  PartitionScheme scheme = PartitionScheme::kIid;
  double concentration = 0.0;
};

/// Shuffled equal-size shards.
Partition partition_iid(const Dataset& data, std::size_t num_devices, std::size_t shard_size,
                        std::uint64_t seed, std::uint64_t repetition);

/// Equal-size shards whose class mix follows Dirichlet(concentration). Each
/// device draws its proportions, then fills its shard one sample at a time
/// from the classes that still have unassigned samples.
Partition partition_dirichlet(const Dataset& data, std::size_t num_devices,
                              std::size_t shard_size, double concentration, std::uint64_t seed,
                              std::uint64_t repetition);

/// Total-variation distance of each shard's label histogram from uniform.
std::vector<double> label_skew(const Dataset& data, const Partition& partition);

// ---------------------------------------------------------------------------
// Models

enum class ModelKind { kLogistic, kMlp };
std::string_view to_string(ModelKind kind);
ModelKind model_kind_from_string(std::string_view name);

/// Softmax regression or a one-hidden-layer tanh network.
struct ModelSpec {
  ModelKind kind = ModelKind::kLogistic;
  std::size_t num_features = 20;
  std::size_t num_classes = 10;
  std::size_t hidden = 16;

  std::size_t dim() const;
};

Vector init_model(const ModelSpec& spec, std::uint64_t seed, std::uint64_t repetition);

/// Mean cross-entropy over `indices`.
double loss(const ModelSpec& spec, std::span<const double> w, const Dataset& data,
            std::span<const std::size_t> indices);

/// Mean per-sample gradient over the shard. Throws std::invalid_argument on an
/// empty shard.
Vector local_gradient(const ModelSpec& spec, std::span<const double> w, const Dataset& data,
                      std::span<const std::size_t> shard);

/// Unweighted mean of the local losses.
double global_loss(const ModelSpec& spec, std::span<const double> w, const Dataset& data,
                   const Partition& partition);

/// Fraction of correctly classified samples.
double accuracy(const ModelSpec& spec, std::span<const double> w, const Dataset& data);

// ---------------------------------------------------------------------------
// Federated loop

enum class Strategy { kSpfl, kErrorFree, kDds, kScheduling, kOneBit };
std::string_view to_string(Strategy s);
Strategy strategy_from_string(std::string_view name);

enum class DeliveryMode { kBernoulli, kPhysical };
std::string_view to_string(DeliveryMode m);
DeliveryMode delivery_mode_from_string(std::string_view name);

/// Quantization term fed to the allocator: the closed-form range bound, or the
/// exact expected error of the stochastic quantizer on the current gradient.
enum class DeltaSource { kBound, kExpected };
std::string_view to_string(DeltaSource d);
DeltaSource delta_source_from_string(std::string_view name);

struct LearnerConfig {
  channel::ChannelParams channel;
  ModelSpec model;
  DatasetSpec data;
  std::size_t shard_size = 100;
  PartitionScheme partition = PartitionScheme::kDirichlet;
  double dirichlet = 0.5;
  std::size_t rounds = 30;
  std::uint64_t seed = 1;
  double eta = 0.05;
  /// Smoothness constant used by the bound; 0 means 1 / eta.
  double lipschitz = 0.0;
  aggregation::CompensationKind compensation =
      aggregation::CompensationKind::kPreviousGlobalModulus;
  unsigned retransmit_limit = 0;
  allocator::BandwidthMethod solver = allocator::BandwidthMethod::kSca;
  /// Relative objective change that ends the per-round alternation.
  double solver_tol = 1e-4;
  DeliveryMode delivery = DeliveryMode::kBernoulli;
  double scheduling_fraction = 0.75;
  DeltaSource delta_source = DeltaSource::kBound;

  std::size_t num_devices() const { return channel.num_devices(); }
  double lipschitz_or_default() const { return lipschitz > 0.0 ? lipschitz : 1.0 / eta; }
  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Everything one repetition needs that does not change across rounds.
struct Workload {
  DataSplit data;
  Partition partition;
  std::uint64_t fading_seed = 0;
};
Workload make_workload(const LearnerConfig& cfg, std::uint64_t repetition);

struct RunState {
  Vector w;
  aggregation::CompensationPolicy policy;
  std::uint64_t repetition = 0;
  std::uint64_t round = 0;  // rounds completed
  double elapsed_s = 0.0;
};
RunState init_state(const LearnerConfig& cfg, std::uint64_t repetition);

struct RoundMetrics {
  std::uint64_t repetition = 0;
  std::uint64_t round = 0;
  double elapsed_s = 0.0;
  double train_loss = 0.0;
  double test_acc = 0.0;
  /// One-step bound for the round's allocation; NaN for strategies the bound
  /// does not describe.
  double bound_value = 0.0;
  bound::BoundDecomposition bound_terms;
  double mean_q = 0.0;
  double mean_p = 0.0;
  std::size_t devices_rejected = 0;
  std::size_t solver_outer_iters = 0;
  std::size_t solver_inner_iters = 0;
  unsigned retransmissions = 0;
  std::string solver_warning;
};

/// Per-round quantities shared by the bound, the allocator and the step.
struct RoundContext {
  std::vector<Vector> local_gradients;
  Vector global_gradient;
  std::vector<Vector> compensation;
  bound::BoundInputs bound_inputs;
  std::vector<bound::GCoefficients> coefficients;
};
RoundContext prepare_round(const LearnerConfig& cfg, const Workload& wl, const RunState& state);

/// SP-FL allocation for the round (alternating solver).
allocator::AllocationResult allocate(const LearnerConfig& cfg, const RoundContext& ctx);

/// Outcome of one stochastic SP-FL step from the current model.
struct StepOutcome {
  Vector w_next;
  Vector g_hat;
  std::vector<double> q_used;
  std::vector<double> p_used;
  std::size_t rejected = 0;
  unsigned max_retransmissions = 0;
};

/// Quantize -> transmit -> reconstruct -> aggregate -> update for SP-FL at a
/// fixed allocation. `draw` selects an independent random stream so the same
/// round can be replayed many times.
StepOutcome spfl_step(const LearnerConfig& cfg, const Workload& wl, const RunState& state,
                      const RoundContext& ctx, const allocator::AllocationPair& alloc,
                      std::uint64_t draw);

/// Executes one round of `strategy` and advances `state`.
RoundMetrics run_round(const LearnerConfig& cfg, const Workload& wl, RunState& state,
                       Strategy strategy);

/// All rounds of one repetition.
std::vector<RoundMetrics> run_repetition(const LearnerConfig& cfg, Strategy strategy,
                                         std::uint64_t repetition);

}  // namespace spfl::learner
