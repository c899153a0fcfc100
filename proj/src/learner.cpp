#include "spfl/learner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "spfl/quantizer.hpp"
#include "spfl/rng.hpp"
#include "spfl/transport.hpp"

namespace spfl::learner {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Base seed of the random streams used by replay `draw`; draw 0 is the
/// experiment's own stream.
std::uint64_t draw_seed(std::uint64_t seed, std::uint64_t draw) {
  return draw == 0 ? seed : mix64(seed + draw * 0xA0761D6478BD642FULL);
}

template <typename T>
void shuffle_in_place(std::vector<T>& v, CounterRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i));
    std::swap(v[i - 1], v[std::min(j, i - 1)]);
  }
}

double norm_sq(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Data

DataSplit make_gaussian_mixture(const DatasetSpec& spec, std::size_t train_size,
                                std::uint64_t seed, std::uint64_t repetition) {
  if (spec.num_classes < 2) throw std::invalid_argument("dataset: num_classes must be >= 2");
  if (spec.num_features < 1) throw std::invalid_argument("dataset: num_features must be >= 1");
  if (!(spec.noise_std > 0.0) || !(spec.noise_spread >= 1.0) || !(spec.feature_scale > 0.0)) {
    throw std::invalid_argument("dataset: need noise_std > 0, noise_spread >= 1, feature_scale > 0");
  }
  const std::size_t c = spec.num_classes;
  const std::size_t d = spec.num_features;

  auto mean_rng = CounterRng::stream(seed, repetition, 0, 0, StreamTag::kDataset);
  std::vector<double> means(c * d);
  for (std::size_t k = 0; k < c; ++k) {
    double n2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      means[k * d + j] = mean_rng.normal();
      n2 += means[k * d + j] * means[k * d + j];
    }
    const double scale = spec.class_separation / std::sqrt(n2);
    for (std::size_t j = 0; j < d; ++j) means[k * d + j] *= scale;
  }

  std::vector<double> sigma(d, spec.noise_std);
  if (d > 1) {
    for (std::size_t j = 0; j < d; ++j) {
      const double t = static_cast<double>(j) / static_cast<double>(d - 1) - 0.5;
      sigma[j] = spec.noise_std * std::pow(spec.noise_spread, t);
    }
  }

  // Rows of `basis` are the noise axes.
  std::vector<double> basis(d * d, 0.0);
  if (spec.rotate_noise) {
    auto basis_rng = CounterRng::stream(seed, repetition, 3, 0, StreamTag::kDataset);
    for (double& v : basis) v = basis_rng.normal();
    for (std::size_t r = 0; r < d; ++r) {
      double* row = basis.data() + r * d;
      for (std::size_t prev = 0; prev < r; ++prev) {
        const double* other = basis.data() + prev * d;
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += row[j] * other[j];
        for (std::size_t j = 0; j < d; ++j) row[j] -= dot * other[j];
      }
      double n2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) n2 += row[j] * row[j];
      const double inv = 1.0 / std::sqrt(n2);
      for (std::size_t j = 0; j < d; ++j) row[j] *= inv;
    }
  } else {
    for (std::size_t j = 0; j < d; ++j) basis[j * d + j] = 1.0;
  }

  auto sample = [&](std::size_t n, std::uint64_t part) {
    Dataset ds;
    ds.num_classes = c;
    ds.num_features = d;
    ds.features.resize(n * d);
    ds.labels.resize(n);
    auto rng = CounterRng::stream(seed, repetition, part, 0, StreamTag::kDataset);
    std::vector<double> z(d);
    for (std::size_t i = 0; i < n; ++i) {
      const auto label = static_cast<int>(i % c);
      ds.labels[i] = label;
      for (std::size_t a = 0; a < d; ++a) z[a] = sigma[a] * rng.normal();
      for (std::size_t j = 0; j < d; ++j) {
        double noise = 0.0;
        for (std::size_t a = 0; a < d; ++a) noise += z[a] * basis[a * d + j];
        ds.features[i * d + j] = spec.feature_scale * (means[label * d + j] + noise);
      }
    }
    return ds;
  };
  return DataSplit{sample(train_size, 1), sample(spec.test_size, 2)};
}

std::string_view to_string(PartitionScheme scheme) {
  return scheme == PartitionScheme::kIid ? "iid" : "dirichlet";
}

PartitionScheme partition_scheme_from_string(std::string_view name) {
  if (name == "iid") return PartitionScheme::kIid;
  if (name == "dirichlet") return PartitionScheme::kDirichlet;
  throw std::invalid_argument("unknown partition '" + std::string(name) +
                              "'; valid options: iid, dirichlet");
}

namespace {

void check_partition_args(const Dataset& data, std::size_t num_devices, std::size_t shard_size) {
  if (num_devices == 0) throw std::invalid_argument("partition: num_devices must be >= 1");
  if (shard_size == 0) throw std::invalid_argument("partition: shard_size must be >= 1");
  if (num_devices * shard_size > data.size()) {
    throw std::invalid_argument("partition: dataset has " + std::to_string(data.size()) +
                                " samples, need " + std::to_string(num_devices * shard_size));
  }
}

}  // namespace

Partition partition_iid(const Dataset& data, std::size_t num_devices, std::size_t shard_size,
                        std::uint64_t seed, std::uint64_t repetition) {
  check_partition_args(data, num_devices, shard_size);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  auto rng = CounterRng::stream(seed, repetition, 0, 0, StreamTag::kPartition);
  shuffle_in_place(order, rng);
  Partition p;
  p.scheme = PartitionScheme::kIid;
  p.shards.resize(num_devices);
  for (std::size_t k = 0; k < num_devices; ++k) {
    p.shards[k].assign(order.begin() + k * shard_size, order.begin() + (k + 1) * shard_size);
  }
  return p;
}

Partition partition_dirichlet(const Dataset& data, std::size_t num_devices,
                              std::size_t shard_size, double concentration, std::uint64_t seed,
                              std::uint64_t repetition) {
  check_partition_args(data, num_devices, shard_size);
  if (!(concentration > 0.0)) {
    throw std::invalid_argument("partition: dirichlet concentration must be > 0");
  }
  const std::size_t c = data.num_classes;
  std::vector<std::vector<std::size_t>> pools(c);
  for (std::size_t i = 0; i < data.size(); ++i) pools[data.labels[i]].push_back(i);
  for (std::size_t k = 0; k < c; ++k) {
    auto rng = CounterRng::stream(seed, repetition, 1, k, StreamTag::kPartition);
    shuffle_in_place(pools[k], rng);
  }
  std::vector<std::size_t> next(c, 0);

  Partition p;
  p.scheme = PartitionScheme::kDirichlet;
  p.concentration = concentration;
  p.shards.resize(num_devices);
  std::vector<double> weights(c);
  for (std::size_t dev = 0; dev < num_devices; ++dev) {
    auto rng = CounterRng::stream(seed, repetition, 2, dev, StreamTag::kPartition);
    std::gamma_distribution<double> gamma(concentration, 1.0);
    double total = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      weights[k] = gamma(rng);
      total += weights[k];
    }
    if (!(total > 0.0)) weights[static_cast<std::size_t>(rng.uniform() * c) % c] = 1.0;

    auto& shard = p.shards[dev];
    shard.reserve(shard_size);
    while (shard.size() < shard_size) {
      double avail = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        if (next[k] < pools[k].size()) avail += weights[k];
      }
      std::size_t pick = c;
      if (avail > 0.0) {
        double u = rng.uniform() * avail;
        for (std::size_t k = 0; k < c; ++k) {
          if (next[k] >= pools[k].size() || weights[k] <= 0.0) continue;
          pick = k;
          u -= weights[k];
          if (u < 0.0) break;
        }
      } else {
        // Preferred classes exhausted: fall back to what is left, by remaining count.
        double remaining = 0.0;
        for (std::size_t k = 0; k < c; ++k) remaining += pools[k].size() - next[k];
        double u = rng.uniform() * remaining;
        for (std::size_t k = 0; k < c; ++k) {
          const double r = static_cast<double>(pools[k].size() - next[k]);
          if (r <= 0.0) continue;
          pick = k;
          u -= r;
          if (u < 0.0) break;
        }
      }
      shard.push_back(pools[pick][next[pick]++]);
    }
  }
  return p;
}

std::vector<double> label_skew(const Dataset& data, const Partition& partition) {
  std::vector<double> out;
  const double uniform = 1.0 / static_cast<double>(data.num_classes);
  for (const auto& shard : partition.shards) {
    std::vector<double> hist(data.num_classes, 0.0);
    for (std::size_t i : shard) hist[data.labels[i]] += 1.0;
    double tv = 0.0;
    for (double h : hist) tv += std::abs(h / static_cast<double>(shard.size()) - uniform);
    out.push_back(0.5 * tv);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Models

std::string_view to_string(ModelKind kind) {
  return kind == ModelKind::kLogistic ? "logistic" : "mlp";
}

ModelKind model_kind_from_string(std::string_view name) {
  if (name == "logistic") return ModelKind::kLogistic;
  if (name == "mlp") return ModelKind::kMlp;
  throw std::invalid_argument("unknown model '" + std::string(name) +
                              "'; valid options: logistic, mlp");
}

std::size_t ModelSpec::dim() const {
  if (kind == ModelKind::kLogistic) return num_classes * (num_features + 1);
  return hidden * (num_features + 1) + num_classes * (hidden + 1);
}

Vector init_model(const ModelSpec& spec, std::uint64_t seed, std::uint64_t repetition) {
  Vector w(spec.dim(), 0.0);
  if (spec.kind == ModelKind::kLogistic) return w;
  auto rng = CounterRng::stream(seed, repetition, 0, 0, StreamTag::kModelInit);
  const std::size_t d = spec.num_features;
  const std::size_t h = spec.hidden;
  const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(h));
  for (std::size_t i = 0; i < h * d; ++i) w[i] = s1 * rng.normal();
  const std::size_t w2 = h * (d + 1);
  for (std::size_t i = 0; i < spec.num_classes * h; ++i) w[w2 + i] = s2 * rng.normal();
  return w;
}

namespace {

/// Forward pass for one sample; fills logits (and hidden activations for the MLP).
void forward(const ModelSpec& spec, std::span<const double> w, std::span<const double> x,
             std::vector<double>& hidden, std::vector<double>& logits) {
  const std::size_t d = spec.num_features;
  const std::size_t c = spec.num_classes;
  if (spec.kind == ModelKind::kLogistic) {
    const double* bias = w.data() + c * d;
    for (std::size_t k = 0; k < c; ++k) {
      const double* row = w.data() + k * d;
      double z = bias[k];
      for (std::size_t j = 0; j < d; ++j) z += row[j] * x[j];
      logits[k] = z;
    }
    return;
  }
  const std::size_t h = spec.hidden;
  const double* b1 = w.data() + h * d;
  const double* w2 = w.data() + h * (d + 1);
  const double* b2 = w2 + c * h;
  for (std::size_t u = 0; u < h; ++u) {
    const double* row = w.data() + u * d;
    double z = b1[u];
    for (std::size_t j = 0; j < d; ++j) z += row[j] * x[j];
    hidden[u] = std::tanh(z);
  }
  for (std::size_t k = 0; k < c; ++k) {
    const double* row = w2 + k * h;
    double z = b2[k];
    for (std::size_t u = 0; u < h; ++u) z += row[u] * hidden[u];
    logits[k] = z;
  }
}

/// Turns logits into probabilities in place; returns log-sum-exp.
double softmax(std::vector<double>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double& z : logits) {
    z = std::exp(z - m);
    s += z;
  }
  for (double& z : logits) z /= s;
  return m + std::log(s);
}

void check_model(const ModelSpec& spec, std::span<const double> w, const Dataset& data) {
  if (w.size() != spec.dim()) throw std::invalid_argument("model: weight vector has wrong size");
  if (data.num_features != spec.num_features || data.num_classes != spec.num_classes) {
    throw std::invalid_argument("model: dataset shape does not match the model");
  }
}

}  // namespace

double loss(const ModelSpec& spec, std::span<const double> w, const Dataset& data,
            std::span<const std::size_t> indices) {
  check_model(spec, w, data);
  if (indices.empty()) throw std::invalid_argument("loss: empty index set");
  std::vector<double> hidden(spec.hidden), logits(spec.num_classes);
  double total = 0.0;
  for (std::size_t i : indices) {
    forward(spec, w, data.row(i), hidden, logits);
    const double target = logits[data.labels[i]];
    const double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double z : logits) s += std::exp(z - m);
    total += m + std::log(s) - target;
  }
  return total / static_cast<double>(indices.size());
}

Vector local_gradient(const ModelSpec& spec, std::span<const double> w, const Dataset& data,
                      std::span<const std::size_t> shard) {
  check_model(spec, w, data);
  if (shard.empty()) throw std::invalid_argument("local_gradient: empty shard");
  const std::size_t d = spec.num_features;
  const std::size_t c = spec.num_classes;
  Vector grad(spec.dim(), 0.0);
  std::vector<double> hidden(spec.hidden), probs(c), delta_h(spec.hidden);
  for (std::size_t i : shard) {
    const auto x = data.row(i);
    forward(spec, w, x, hidden, probs);
    softmax(probs);
    probs[data.labels[i]] -= 1.0;
    if (spec.kind == ModelKind::kLogistic) {
      double* bias = grad.data() + c * d;
      for (std::size_t k = 0; k < c; ++k) {
        double* row = grad.data() + k * d;
        for (std::size_t j = 0; j < d; ++j) row[j] += probs[k] * x[j];
        bias[k] += probs[k];
      }
      continue;
    }
    const std::size_t h = spec.hidden;
    const double* w2 = w.data() + h * (d + 1);
    double* g_b1 = grad.data() + h * d;
    double* g_w2 = grad.data() + h * (d + 1);
    double* g_b2 = g_w2 + c * h;
    for (std::size_t u = 0; u < h; ++u) {
      double back = 0.0;
      for (std::size_t k = 0; k < c; ++k) back += probs[k] * w2[k * h + u];
      delta_h[u] = back * (1.0 - hidden[u] * hidden[u]);
    }
    for (std::size_t k = 0; k < c; ++k) {
      for (std::size_t u = 0; u < h; ++u) g_w2[k * h + u] += probs[k] * hidden[u];
      g_b2[k] += probs[k];
    }
    for (std::size_t u = 0; u < h; ++u) {
      double* row = grad.data() + u * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += delta_h[u] * x[j];
      g_b1[u] += delta_h[u];
    }
  }
  const double inv = 1.0 / static_cast<double>(shard.size());
  for (double& g : grad) g *= inv;
  return grad;
}

double global_loss(const ModelSpec& spec, std::span<const double> w, const Dataset& data,
                   const Partition& partition) {
  if (partition.shards.empty()) throw std::invalid_argument("global_loss: empty partition");
  double total = 0.0;
  for (const auto& shard : partition.shards) total += loss(spec, w, data, shard);
  return total / static_cast<double>(partition.shards.size());
}

double accuracy(const ModelSpec& spec, std::span<const double> w, const Dataset& data) {
  check_model(spec, w, data);
  if (data.size() == 0) throw std::invalid_argument("accuracy: empty dataset");
  std::vector<double> hidden(spec.hidden), logits(spec.num_classes);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    forward(spec, w, data.row(i), hidden, logits);
    const auto best = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (best == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Federated loop

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kSpfl:
      return "spfl";
    case Strategy::kErrorFree:
      return "error_free";
    case Strategy::kDds:
      return "dds";
    case Strategy::kScheduling:
      return "scheduling";
    case Strategy::kOneBit:
      return "one_bit";
  }
  return "unknown";
}

Strategy strategy_from_string(std::string_view name) {
  for (auto s : {Strategy::kSpfl, Strategy::kErrorFree, Strategy::kDds, Strategy::kScheduling,
                 Strategy::kOneBit}) {
    if (name == to_string(s)) return s;
  }
  throw std::invalid_argument("unknown strategy '" + std::string(name) +
                              "'; valid options: spfl, error_free, dds, scheduling, one_bit");
}

std::string_view to_string(DeliveryMode m) {
  return m == DeliveryMode::kBernoulli ? "bernoulli" : "physical";
}

DeliveryMode delivery_mode_from_string(std::string_view name) {
  if (name == "bernoulli") return DeliveryMode::kBernoulli;
  if (name == "physical") return DeliveryMode::kPhysical;
  throw std::invalid_argument("unknown delivery mode '" + std::string(name) +
                              "'; valid options: bernoulli, physical");
}

std::string_view to_string(DeltaSource d) {
  return d == DeltaSource::kBound ? "bound" : "expected";
}

DeltaSource delta_source_from_string(std::string_view name) {
  if (name == "bound") return DeltaSource::kBound;
  if (name == "expected") return DeltaSource::kExpected;
  throw std::invalid_argument("unknown delta source '" + std::string(name) +
                              "'; valid options: bound, expected");
}

void LearnerConfig::validate() const {
  channel.validate();
  if (channel.model_dim != model.dim()) {
    throw std::invalid_argument("model_dim " + std::to_string(channel.model_dim) +
                                " does not match the model's parameter count " +
                                std::to_string(model.dim()));
  }
  if (model.num_features != data.num_features || model.num_classes != data.num_classes) {
    throw std::invalid_argument("model and dataset shapes differ");
  }
  if (model.kind == ModelKind::kMlp && model.hidden == 0) {
    throw std::invalid_argument("hidden: must be >= 1 for the mlp model");
  }
  if (shard_size == 0) throw std::invalid_argument("shard_size: must be >= 1");
  if (rounds == 0) throw std::invalid_argument("rounds: must be >= 1");
  if (!(eta > 0.0)) throw std::invalid_argument("eta: must be > 0");
  if (lipschitz < 0.0) throw std::invalid_argument("lipschitz: must be >= 0");
  if (!(solver_tol > 0.0)) throw std::invalid_argument("solver_tol: must be > 0");
  if (partition == PartitionScheme::kDirichlet && !(dirichlet > 0.0)) {
    throw std::invalid_argument("dirichlet: must be > 0");
  }
  if (!(scheduling_fraction > 0.0 && scheduling_fraction <= 1.0)) {
    throw std::invalid_argument("scheduling_fraction: must lie in (0, 1]");
  }
  if (data.test_size == 0) throw std::invalid_argument("test_size: must be >= 1");
}

Workload make_workload(const LearnerConfig& cfg, std::uint64_t repetition) {
  const std::size_t k = cfg.num_devices();
  Workload wl;
  wl.data = make_gaussian_mixture(cfg.data, k * cfg.shard_size, cfg.seed, repetition);
  wl.partition = cfg.partition == PartitionScheme::kIid
                     ? partition_iid(wl.data.train, k, cfg.shard_size, cfg.seed, repetition)
                     : partition_dirichlet(wl.data.train, k, cfg.shard_size, cfg.dirichlet,
                                           cfg.seed, repetition);
  wl.fading_seed = CounterRng::stream(cfg.seed, repetition, 0, 0, StreamTag::kFading)();
  return wl;
}

RunState init_state(const LearnerConfig& cfg, std::uint64_t repetition) {
  return RunState{init_model(cfg.model, cfg.seed, repetition),
                  aggregation::CompensationPolicy(cfg.compensation, cfg.num_devices(),
                                                  cfg.model.dim()),
                  repetition, 0, 0.0};
}

RoundContext prepare_round(const LearnerConfig& cfg, const Workload& wl, const RunState& state) {
  const std::size_t k_dev = cfg.num_devices();
  const std::size_t l = cfg.model.dim();
  RoundContext ctx;
  ctx.local_gradients.reserve(k_dev);
  ctx.global_gradient.assign(l, 0.0);
  for (std::size_t k = 0; k < k_dev; ++k) {
    ctx.local_gradients.push_back(
        local_gradient(cfg.model, state.w, wl.data.train, wl.partition.shards[k]));
  }
  for (std::size_t i = 0; i < l; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < k_dev; ++k) s += ctx.local_gradients[k][i];
    ctx.global_gradient[i] = s / static_cast<double>(k_dev);
  }
  const auto eps = bound::epsilon_oracle(ctx.local_gradients, ctx.global_gradient);

  auto& in = ctx.bound_inputs;
  in.eta = cfg.eta;
  in.lipschitz = cfg.lipschitz_or_default();
  in.global_grad_norm_sq = norm_sq(ctx.global_gradient);
  in.devices.resize(k_dev);
  ctx.compensation.reserve(k_dev);
  for (std::size_t k = 0; k < k_dev; ++k) {
    ctx.compensation.push_back(aggregation::compensation_vector(state.policy, k));
    const auto& g = ctx.local_gradients[k];
    auto& d = in.devices[k];
    d.grad_norm_sq = norm_sq(g);
    d.upsilon = aggregation::upsilon(g, ctx.compensation[k]);
    d.epsilon_sq = eps[k];
    d.delta_sq = cfg.delta_source == DeltaSource::kBound
                     ? quantizer::variance_bound_for(g, cfg.channel.quant_bits).delta_sq
                     : quantizer::expected_error(g, cfg.channel.quant_bits);
    d.comp_norm_sq = norm_sq(ctx.compensation[k]);
    ctx.coefficients.push_back(bound::g_coefficients(in, k));
  }
  return ctx;
}

allocator::AllocationResult allocate(const LearnerConfig& cfg, const RoundContext& ctx) {
  allocator::AlternateOptions opts;
  opts.method = cfg.solver;
  opts.tol = cfg.solver_tol;
  opts.sca.tol = 1e-9;
  return allocator::alternate(ctx.coefficients, cfg.channel, opts);
}

namespace {

quantizer::QuantizedGradient quantize_device(const LearnerConfig& cfg, const RunState& state,
                                             std::span<const double> g, std::size_t k,
                                             std::uint64_t draw) {
  auto rng = CounterRng::stream(draw_seed(cfg.seed, draw), state.repetition, state.round, k,
                                StreamTag::kQuantize);
  return quantizer::quantize(g, cfg.channel.quant_bits, rng);
}

CounterRng transmit_rng(const LearnerConfig& cfg, const RunState& state, std::size_t k,
                        std::uint64_t draw) {
  return CounterRng::stream(draw_seed(cfg.seed, draw), state.repetition, state.round, k,
                            StreamTag::kTransmit);
}

double fading_gain(const Workload& wl, const RunState& state, std::size_t k, std::uint64_t draw) {
  return channel::draw_fading_gain(draw_seed(wl.fading_seed, draw), state.round, k);
}

/// Bits of a packet carrying signs, modulus codes and the range header together.
double full_packet_bits(const channel::ChannelParams& ch) {
  return ch.sign_packet_bits() + ch.modulus_packet_bits();
}

}  // namespace

StepOutcome spfl_step(const LearnerConfig& cfg, const Workload& wl, const RunState& state,
                      const RoundContext& ctx, const allocator::AllocationPair& alloc,
                      std::uint64_t draw) {
  const std::size_t k_dev = cfg.num_devices();
  const std::size_t l = cfg.model.dim();
  StepOutcome out;
  std::vector<std::optional<Vector>> recon(k_dev);
  out.q_used.resize(k_dev);
  out.p_used.resize(k_dev);
  for (std::size_t k = 0; k < k_dev; ++k) {
    const auto q = quantize_device(cfg, state, ctx.local_gradients[k], k, draw);
    auto rng = transmit_rng(cfg, state, k, draw);
    transport::PacketOutcome po;
    if (cfg.delivery == DeliveryMode::kPhysical) {
      po = transport::transmit_physical(alloc.alpha[k], alloc.beta[k],
                                        fading_gain(wl, state, k, draw), cfg.channel, k, rng,
                                        cfg.retransmit_limit);
    } else {
      po = transport::transmit(channel::q_sign(alloc.alpha[k], alloc.beta[k], cfg.channel, k),
                               channel::p_modulus(alloc.alpha[k], alloc.beta[k], cfg.channel, k),
                               rng, cfg.retransmit_limit);
    }
    out.q_used[k] = po.q_used;
    out.p_used[k] = po.p_used;
    out.max_retransmissions = std::max(out.max_retransmissions, po.retransmissions_used);
    recon[k] = transport::reconstruct(po, q, ctx.compensation[k]);
    if (!recon[k]) ++out.rejected;
  }
  auto est = aggregation::aggregate(recon, out.q_used, k_dev, l);
  out.w_next = aggregation::update_model(state.w, est.g_hat, cfg.eta);
  out.g_hat = std::move(est.g_hat);
  return out;
}

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Baselines that send one packet per device. Lost packets count as zero in
/// the average over the devices asked to transmit.
struct BaselineStep {
  Vector w_next;
  Vector g_hat;
  double mean_q = 0.0;
  std::size_t rejected = 0;
};

BaselineStep baseline_step(const LearnerConfig& cfg, const Workload& wl, const RunState& state,
                           const RoundContext& ctx, Strategy strategy) {
  const auto& ch = cfg.channel;
  const std::size_t k_dev = cfg.num_devices();
  const std::size_t l = cfg.model.dim();
  BaselineStep out;
  out.g_hat.assign(l, 0.0);

  std::vector<bool> scheduled(k_dev, true);
  std::size_t active = k_dev;
  if (strategy == Strategy::kScheduling) {
    const auto want = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(cfg.scheduling_fraction * k_dev)));
    std::vector<std::size_t> order(k_dev);
    std::iota(order.begin(), order.end(), 0);
    // Strongest large-scale gain first; stable sort breaks ties by index.
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return ch.distances_m[a] < ch.distances_m[b];
    });
    scheduled.assign(k_dev, false);
    for (std::size_t i = 0; i < want; ++i) scheduled[order[i]] = true;
    active = want;
  }
  const double bandwidth = ch.bandwidth_total_hz / static_cast<double>(active);
  const double bits = strategy == Strategy::kOneBit ? ch.sign_packet_bits() : full_packet_bits(ch);

  double q_sum = 0.0;
  for (std::size_t k = 0; k < k_dev; ++k) {
    if (!scheduled[k]) {
      ++out.rejected;
      continue;
    }
    const double power = ch.tx_power_w[k];
    const double q = std::exp(channel::outage_exponent(bandwidth, power, bits, ch, k));
    q_sum += q;
    bool ok = false;
    if (cfg.delivery == DeliveryMode::kPhysical) {
      ok = channel::packet_delivered(bandwidth, power, bits, fading_gain(wl, state, k, 0), ch, k);
    } else {
      auto rng = transmit_rng(cfg, state, k, 0);
      ok = rng.bernoulli(q);
    }
    if (!ok) {
      ++out.rejected;
      continue;
    }
    if (strategy == Strategy::kOneBit) {
      for (std::size_t i = 0; i < l; ++i) out.g_hat[i] += quantizer::sign_of(ctx.local_gradients[k][i]);
    } else {
      const auto qg = quantize_device(cfg, state, ctx.local_gradients[k], k, 0);
      const auto v = quantizer::decode(qg);
      for (std::size_t i = 0; i < l; ++i) out.g_hat[i] += v[i];
    }
  }
  for (double& g : out.g_hat) g /= static_cast<double>(active);
  out.mean_q = q_sum / static_cast<double>(k_dev);
  out.w_next = aggregation::update_model(state.w, out.g_hat, cfg.eta);
  return out;
}

}  // namespace

RoundMetrics run_round(const LearnerConfig& cfg, const Workload& wl, RunState& state,
                       Strategy strategy) {
  const std::size_t k_dev = cfg.num_devices();
  const std::size_t l = cfg.model.dim();
  RoundContext ctx = prepare_round(cfg, wl, state);
  RoundMetrics m;
  m.repetition = state.repetition;
  m.round = state.round + 1;
  Vector w_next;
  Vector g_hat;

  switch (strategy) {
    case Strategy::kSpfl: {
      const auto alloc = allocate(cfg, ctx);
      auto step = spfl_step(cfg, wl, state, ctx, alloc.allocation, 0);
      m.bound_terms = bound::one_step_bound_qp(ctx.bound_inputs, step.q_used, step.p_used);
      m.bound_value = m.bound_terms.total;
      m.mean_q = mean_of(step.q_used);
      m.mean_p = mean_of(step.p_used);
      m.devices_rejected = step.rejected;
      m.solver_outer_iters = alloc.diagnostics.outer_iterations;
      m.solver_inner_iters = alloc.diagnostics.inner_iterations;
      m.solver_warning = alloc.diagnostics.warning;
      m.retransmissions = step.max_retransmissions;
      w_next = std::move(step.w_next);
      g_hat = std::move(step.g_hat);
      break;
    }
    case Strategy::kErrorFree: {
      std::vector<std::optional<Vector>> recon(k_dev);
      for (std::size_t k = 0; k < k_dev; ++k) {
        recon[k] = quantizer::decode(quantize_device(cfg, state, ctx.local_gradients[k], k, 0));
      }
      const std::vector<double> ones(k_dev, 1.0);
      auto est = aggregation::aggregate(recon, ones, k_dev, l);
      w_next = aggregation::update_model(state.w, est.g_hat, cfg.eta);
      g_hat = std::move(est.g_hat);
      m.bound_terms = bound::one_step_bound_qp(ctx.bound_inputs, ones, ones);
      m.bound_value = m.bound_terms.total;
      m.mean_q = 1.0;
      m.mean_p = 1.0;
      break;
    }
    case Strategy::kDds:
    case Strategy::kScheduling:
    case Strategy::kOneBit: {
      auto step = baseline_step(cfg, wl, state, ctx, strategy);
      w_next = std::move(step.w_next);
      g_hat = std::move(step.g_hat);
      m.bound_value = kNaN;
      m.bound_terms.total = kNaN;
      m.mean_q = step.mean_q;
      m.mean_p = strategy == Strategy::kOneBit ? 0.0 : step.mean_q;
      m.devices_rejected = step.rejected;
      break;
    }
  }

  state.policy.record_round(g_hat, ctx.local_gradients);
  state.w = std::move(w_next);
  state.round += 1;
  state.elapsed_s += cfg.channel.latency_s * (1.0 + m.retransmissions);
  m.elapsed_s = state.elapsed_s;
  m.train_loss = global_loss(cfg.model, state.w, wl.data.train, wl.partition);
  m.test_acc = accuracy(cfg.model, state.w, wl.data.test);
  return m;
}

std::vector<RoundMetrics> run_repetition(const LearnerConfig& cfg, Strategy strategy,
                                         std::uint64_t repetition) {
  cfg.validate();
  const Workload wl = make_workload(cfg, repetition);
  RunState state = init_state(cfg, repetition);
  std::vector<RoundMetrics> rows;
  rows.reserve(cfg.rounds);
  for (std::size_t n = 0; n < cfg.rounds; ++n) rows.push_back(run_round(cfg, wl, state, strategy));
  return rows;
}

}  // namespace spfl::learner
