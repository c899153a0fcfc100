#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "spfl/learner.hpp"

namespace ln = spfl::learner;
using ln::Strategy;

namespace {

ln::LearnerConfig small_config(double power_w, std::size_t devices = 4) {
  ln::LearnerConfig cfg;
  cfg.data.num_features = 5;
  cfg.data.num_classes = 3;
  cfg.data.test_size = 300;
  cfg.model.num_features = 5;
  cfg.model.num_classes = 3;
  cfg.shard_size = 30;
  cfg.rounds = 3;
  cfg.eta = 0.5;
  cfg.channel.noise_psd_w_per_hz = std::pow(10.0, -20.4);
  cfg.channel.model_dim = cfg.model.dim();
  cfg.channel.latency_s = 1e-3;
  for (std::size_t k = 0; k < devices; ++k) {
    cfg.channel.distances_m.push_back(100.0 + 50.0 * ((k * 7) % devices));
  }
  cfg.channel.tx_power_w.assign(devices, power_w);
  return cfg;
}

double fd_loss(const ln::ModelSpec& spec, std::vector<double> w, const ln::Dataset& data,
               std::span<const std::size_t> idx, std::size_t i) {
  const double h = 1e-6;
  w[i] += h;
  const double up = ln::loss(spec, w, data, idx);
  w[i] -= 2 * h;
  const double down = ln::loss(spec, w, data, idx);
  return (up - down) / (2 * h);
}

}  // namespace

TEST(Data, BalancedAndDeterministic) {
  ln::DatasetSpec spec;
  spec.num_classes = 4;
  spec.num_features = 6;
  spec.test_size = 400;
  const auto a = ln::make_gaussian_mixture(spec, 200, 1, 0);
  const auto b = ln::make_gaussian_mixture(spec, 200, 1, 0);
  EXPECT_EQ(a.train.features, b.train.features);
  EXPECT_EQ(a.train.size(), 200u);
  EXPECT_EQ(a.test.size(), 400u);
  std::vector<int> counts(4, 0);
  for (int y : a.train.labels) ++counts[y];
  for (int c : counts) EXPECT_EQ(c, 50);
  const auto c = ln::make_gaussian_mixture(spec, 200, 1, 1);
  EXPECT_NE(a.train.features, c.train.features);
}

TEST(Partition, IidShardsAreDisjointAndEqual) {
  ln::DatasetSpec spec;
  const auto d = ln::make_gaussian_mixture(spec, 500, 2, 0);
  const auto p = ln::partition_iid(d.train, 5, 100, 2, 0);
  std::set<std::size_t> seen;
  for (const auto& s : p.shards) {
    EXPECT_EQ(s.size(), 100u);
    seen.insert(s.begin(), s.end());
  }
  EXPECT_EQ(seen.size(), 500u);
}

TEST(Partition, DirichletSkewExceedsIid) {
  ln::DatasetSpec spec;
  const auto d = ln::make_gaussian_mixture(spec, 2000, 3, 0);
  const auto iid = ln::partition_iid(d.train, 20, 100, 3, 0);
  const auto dir = ln::partition_dirichlet(d.train, 20, 100, 0.1, 3, 0);
  for (const auto& s : dir.shards) EXPECT_EQ(s.size(), 100u);
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  EXPECT_GT(median(ln::label_skew(d.train, dir)), median(ln::label_skew(d.train, iid)));
}

TEST(Partition, NonIidEpsilonLarger) {
  auto cfg = small_config(1.0, 10);
  cfg.partition = ln::PartitionScheme::kIid;
  const auto wl_iid = ln::make_workload(cfg, 0);
  const auto st = ln::init_state(cfg, 0);
  const auto ctx_iid = ln::prepare_round(cfg, wl_iid, st);
  cfg.partition = ln::PartitionScheme::kDirichlet;
  cfg.dirichlet = 0.1;
  const auto wl_dir = ln::make_workload(cfg, 0);
  const auto ctx_dir = ln::prepare_round(cfg, wl_dir, st);
  auto median_eps = [](const ln::RoundContext& ctx) {
    std::vector<double> e;
    for (const auto& d : ctx.bound_inputs.devices) e.push_back(d.epsilon_sq);
    std::sort(e.begin(), e.end());
    return e[e.size() / 2];
  };
  EXPECT_GT(median_eps(ctx_dir), median_eps(ctx_iid));
}

TEST(Model, GradientMatchesFiniteDifferences) {
  for (auto kind : {ln::ModelKind::kLogistic, ln::ModelKind::kMlp}) {
    ln::ModelSpec spec;
    spec.kind = kind;
    spec.num_features = 5;
    spec.num_classes = 3;
    spec.hidden = 4;
    ln::DatasetSpec ds;
    ds.num_features = 5;
    ds.num_classes = 3;
    const auto d = ln::make_gaussian_mixture(ds, 30, 4, 0);
    auto w = ln::init_model(spec, 4, 0);
    for (double& x : w) x += 0.1;
    std::vector<std::size_t> idx(30);
    std::iota(idx.begin(), idx.end(), 0);
    const auto g = ln::local_gradient(spec, w, d.train, idx);
    ASSERT_EQ(g.size(), spec.dim());
    for (std::size_t i = 0; i < g.size(); i += 3) {
      const double fd = fd_loss(spec, w, d.train, idx, i);
      EXPECT_NEAR(g[i], fd, 1e-4 * std::max(1.0, std::abs(fd))) << "coordinate " << i;
    }
  }
}

TEST(Model, SingleSampleAndEmptyShard) {
  ln::ModelSpec spec;
  spec.num_features = 5;
  spec.num_classes = 3;
  ln::DatasetSpec ds;
  ds.num_features = 5;
  ds.num_classes = 3;
  const auto d = ln::make_gaussian_mixture(ds, 12, 5, 0);
  const auto w = ln::init_model(spec, 5, 0);
  const std::vector<std::size_t> one{3};
  const std::vector<std::size_t> two{3, 3};
  EXPECT_EQ(ln::local_gradient(spec, w, d.train, one), ln::local_gradient(spec, w, d.train, two));
  const std::vector<std::size_t> none;
  EXPECT_THROW(ln::local_gradient(spec, w, d.train, none), std::invalid_argument);
}

TEST(Model, ZeroWeightsOnSymmetricDataGiveZeroBiasGradient) {
  ln::ModelSpec spec;
  spec.num_features = 1;
  spec.num_classes = 2;
  ln::Dataset d;
  d.num_features = 1;
  d.num_classes = 2;
  d.features = {1.0, -1.0};
  d.labels = {0, 1};
  const std::vector<double> w(spec.dim(), 0.0);
  const std::vector<std::size_t> idx{0, 1};
  const auto g = ln::local_gradient(spec, w, d, idx);
  // Layout: class-major weights, then one bias per class.
  EXPECT_NEAR(g[spec.dim() - 1], 0.0, 1e-15);
  EXPECT_NEAR(g[spec.dim() - 2], 0.0, 1e-15);
}

TEST(Model, GlobalLossIsMeanOfLocalLosses) {
  ln::ModelSpec spec;
  ln::DatasetSpec ds;
  const auto d = ln::make_gaussian_mixture(ds, 300, 6, 0);
  const auto w = ln::init_model(spec, 6, 0);
  const auto p = ln::partition_iid(d.train, 3, 100, 6, 0);
  double mean = 0.0;
  for (const auto& s : p.shards) mean += ln::loss(spec, w, d.train, s) / 3.0;
  EXPECT_NEAR(ln::global_loss(spec, w, d.train, p), mean, 1e-12);

  std::vector<std::size_t> all(300);
  std::iota(all.begin(), all.end(), 0);
  EXPECT_NEAR(ln::global_loss(spec, w, d.train, p), ln::loss(spec, w, d.train, all), 1e-12);

  ln::Partition single;
  single.shards = {p.shards[0]};
  EXPECT_DOUBLE_EQ(ln::global_loss(spec, w, d.train, single), ln::loss(spec, w, d.train, p.shards[0]));
}

TEST(Rounds, RepetitionIsDeterministic) {
  const auto cfg = small_config(1e-3);
  for (auto s : {Strategy::kSpfl, Strategy::kDds, Strategy::kOneBit}) {
    const auto a = ln::run_repetition(cfg, s, 0);
    const auto b = ln::run_repetition(cfg, s, 0);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].train_loss, b[i].train_loss);
      EXPECT_EQ(a[i].test_acc, b[i].test_acc);
    }
  }
}

TEST(Rounds, ErrorFreeEqualsLosslessSpflStep) {
  const auto cfg = small_config(1e30);
  const auto wl = ln::make_workload(cfg, 0);
  auto state = ln::init_state(cfg, 0);
  const auto ctx = ln::prepare_round(cfg, wl, state);
  spfl::allocator::AllocationPair alloc;
  alloc.alpha.assign(4, 0.5);
  alloc.beta.assign(4, 0.2);
  const auto step = ln::spfl_step(cfg, wl, state, ctx, alloc, 0);
  ASSERT_EQ(step.rejected, 0u);
  for (double q : step.q_used) ASSERT_EQ(q, 1.0);
  for (double p : step.p_used) ASSERT_EQ(p, 1.0);
  ln::run_round(cfg, wl, state, Strategy::kErrorFree);
  EXPECT_EQ(state.w, step.w_next);
}

TEST(Rounds, LostBaselinePacketsLeaveModelUnchanged) {
  const auto cfg = small_config(1e-30);
  const auto wl = ln::make_workload(cfg, 0);
  for (auto s : {Strategy::kDds, Strategy::kScheduling, Strategy::kOneBit}) {
    auto state = ln::init_state(cfg, 0);
    const auto w0 = state.w;
    const auto m = ln::run_round(cfg, wl, state, s);
    EXPECT_EQ(state.w, w0);
    EXPECT_EQ(m.devices_rejected, 4u);
    EXPECT_TRUE(std::isnan(m.bound_value));
  }
}

TEST(Rounds, OneBitIsSignDescentOverAllDevices) {
  const auto cfg = small_config(1e30);
  const auto wl = ln::make_workload(cfg, 0);
  auto state = ln::init_state(cfg, 0);
  const auto ctx = ln::prepare_round(cfg, wl, state);
  const auto w0 = state.w;
  ln::run_round(cfg, wl, state, Strategy::kOneBit);
  for (std::size_t i = 0; i < w0.size(); ++i) {
    double s = 0.0;
    for (const auto& g : ctx.local_gradients) s += g[i] < 0.0 ? -1.0 : 1.0;
    EXPECT_NEAR(state.w[i], w0[i] - cfg.eta * s / 4.0, 1e-15);
  }
}

TEST(Rounds, SchedulingAveragesNearestDevices) {
  auto cfg = small_config(1e30);
  cfg.channel.quant_bits = 24;
  cfg.scheduling_fraction = 0.5;
  cfg.channel.distances_m = {300.0, 100.0, 200.0, 100.0};
  const auto wl = ln::make_workload(cfg, 0);
  auto state = ln::init_state(cfg, 0);
  const auto ctx = ln::prepare_round(cfg, wl, state);
  const auto w0 = state.w;
  const auto m = ln::run_round(cfg, wl, state, Strategy::kScheduling);
  EXPECT_EQ(m.devices_rejected, 2u);
  for (std::size_t i = 0; i < w0.size(); ++i) {
    const double avg = (ctx.local_gradients[1][i] + ctx.local_gradients[3][i]) / 2.0;
    EXPECT_NEAR(state.w[i], w0[i] - cfg.eta * avg, 1e-6);
  }
}

TEST(Rounds, SpflReportsBoundAndElapsedTime) {
  auto cfg = small_config(1e-6);
  cfg.retransmit_limit = 0;
  const auto rows = ln::run_repetition(cfg, Strategy::kSpfl, 0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_TRUE(std::isfinite(rows[i].bound_value));
    EXPECT_DOUBLE_EQ(rows[i].elapsed_s, cfg.channel.latency_s * static_cast<double>(i + 1));
    EXPECT_GE(rows[i].mean_q, 0.0);
    EXPECT_LE(rows[i].mean_q, 1.0);
  }
}

TEST(Rounds, ExpectedDeltaNeverExceedsBound) {
  auto cfg = small_config(1e-3);
  const auto wl = ln::make_workload(cfg, 0);
  const auto st = ln::init_state(cfg, 0);
  const auto bound_ctx = ln::prepare_round(cfg, wl, st);
  cfg.delta_source = ln::DeltaSource::kExpected;
  const auto exact_ctx = ln::prepare_round(cfg, wl, st);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_LE(exact_ctx.bound_inputs.devices[k].delta_sq,
              bound_ctx.bound_inputs.devices[k].delta_sq);
  }
}

TEST(Config, ValidationNamesField) {
  auto cfg = small_config(1e-3);
  cfg.eta = 0.0;
  try {
    cfg.validate();
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("eta"), std::string::npos);
  }
  cfg = small_config(1e-3);
  cfg.channel.model_dim += 1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Names, RoundTrip) {
  for (auto s : {Strategy::kSpfl, Strategy::kErrorFree, Strategy::kDds, Strategy::kScheduling,
                 Strategy::kOneBit}) {
    EXPECT_EQ(ln::strategy_from_string(ln::to_string(s)), s);
  }
  EXPECT_THROW(ln::strategy_from_string("fedavg"), std::invalid_argument);
  EXPECT_EQ(ln::delta_source_from_string("expected"), ln::DeltaSource::kExpected);
  EXPECT_EQ(ln::delivery_mode_from_string("physical"), ln::DeliveryMode::kPhysical);
  EXPECT_EQ(ln::model_kind_from_string("mlp"), ln::ModelKind::kMlp);
  EXPECT_EQ(ln::partition_scheme_from_string("iid"), ln::PartitionScheme::kIid);
}
