#include "spfl/cli.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "spfl/quantizer.hpp"
#include "spfl/rng.hpp"

namespace spfl::cli {

namespace {

using learner::Strategy;

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_double(std::string_view s) {
  s = trim(s);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw std::invalid_argument("expected a number, got '" + std::string(s) + "'");
  }
  if (!std::isfinite(v)) throw std::invalid_argument("value must be finite");
  return v;
}

std::uint64_t parse_uint(std::string_view s) {
  s = trim(s);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw std::invalid_argument("expected a nonnegative integer, got '" + std::string(s) + "'");
  }
  return v;
}

unsigned parse_unsigned(std::string_view s) {
  const std::uint64_t v = parse_uint(s);
  if (v > std::numeric_limits<unsigned>::max()) throw std::invalid_argument("value too large");
  return static_cast<unsigned>(v);
}

bool parse_bool(std::string_view s) {
  s = trim(s);
  if (s == "true") return true;
  if (s == "false") return false;
  throw std::invalid_argument("expected true or false, got '" + std::string(s) + "'");
}

struct Field {
  std::string_view key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view)> set;
};

template <typename T>
Field real_field(std::string_view key, T ExperimentConfig::*member) {
  return {key, [member](const ExperimentConfig& c) { return format_double(c.*member); },
          [member](ExperimentConfig& c, std::string_view v) { c.*member = parse_double(v); }};
}

template <typename T>
Field uint_field(std::string_view key, T ExperimentConfig::*member) {
  return {key, [member](const ExperimentConfig& c) { return std::to_string(c.*member); },
          [member](ExperimentConfig& c, std::string_view v) {
            const std::uint64_t x = parse_uint(v);
            if (x > std::numeric_limits<T>::max()) throw std::invalid_argument("value too large");
            c.*member = static_cast<T>(x);
          }};
}

template <typename E, typename FromString>
Field enum_field(std::string_view key, E ExperimentConfig::*member, FromString from) {
  return {key, [member](const ExperimentConfig& c) { return std::string(to_string(c.*member)); },
          [member, from](ExperimentConfig& c, std::string_view v) { c.*member = from(trim(v)); }};
}

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> table = {
      uint_field("devices", &C::devices),
      real_field("bandwidth_hz", &C::bandwidth_hz),
      real_field("noise_psd_dbm_hz", &C::noise_psd_dbm_hz),
      real_field("pathloss_exponent", &C::pathloss_exponent),
      real_field("tx_power_dbm", &C::tx_power_dbm),
      real_field("latency_s", &C::latency_s),
      uint_field("quant_bits", &C::quant_bits),
      uint_field("range_bits", &C::range_bits),
      real_field("distance_min_m", &C::distance_min_m),
      real_field("cell_radius_m", &C::cell_radius_m),
      uint_field("rounds", &C::rounds),
      uint_field("repetitions", &C::repetitions),
      uint_field("seed", &C::seed),
      {"strategies",
       [](const C& c) {
         std::string out;
         for (std::size_t i = 0; i < c.strategies.size(); ++i) {
           if (i) out += ',';
           out += learner::to_string(c.strategies[i]);
         }
         return out;
       },
       [](C& c, std::string_view v) {
         c.strategies.clear();
         for (auto name : split(v, ',')) c.strategies.push_back(learner::strategy_from_string(name));
       }},
      enum_field("compensation", &C::compensation, aggregation::compensation_kind_from_string),
      uint_field("retransmit_limit", &C::retransmit_limit),
      enum_field("solver", &C::solver, allocator::bandwidth_method_from_string),
      real_field("solver_tol", &C::solver_tol),
      enum_field("delta_source", &C::delta_source, learner::delta_source_from_string),
      enum_field("delivery", &C::delivery, learner::delivery_mode_from_string),
      real_field("scheduling_fraction", &C::scheduling_fraction),
      real_field("eta", &C::eta),
      real_field("lipschitz", &C::lipschitz),
      enum_field("partition", &C::partition, learner::partition_scheme_from_string),
      real_field("dirichlet", &C::dirichlet),
      uint_field("shard_size", &C::shard_size),
      enum_field("model", &C::model, learner::model_kind_from_string),
      uint_field("hidden", &C::hidden),
      uint_field("classes", &C::classes),
      uint_field("features", &C::features),
      real_field("class_separation", &C::class_separation),
      real_field("noise_std", &C::noise_std),
      real_field("noise_spread", &C::noise_spread),
      real_field("feature_scale", &C::feature_scale),
      {"rotate_noise", [](const C& c) { return std::string(c.rotate_noise ? "true" : "false"); },
       [](C& c, std::string_view v) { c.rotate_noise = parse_bool(v); }},
      uint_field("test_size", &C::test_size),
      enum_field("sweep_axis", &C::sweep_axis, sweep_axis_from_string),
      {"sweep_values",
       [](const C& c) {
         std::string out;
         for (std::size_t i = 0; i < c.sweep_values.size(); ++i) {
           if (i) out += ',';
           out += format_double(c.sweep_values[i]);
         }
         return out;
       },
       [](C& c, std::string_view v) {
         c.sweep_values.clear();
         for (auto item : split(v, ',')) c.sweep_values.push_back(parse_double(item));
       }},
  };
  return table;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool is_integer(double v) { return std::floor(v) == v; }

void check(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

std::string_view to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kNone:
      return "none";
    case SweepAxis::kPower:
      return "power";
    case SweepAxis::kLatency:
      return "latency";
    case SweepAxis::kDevices:
      return "devices";
    case SweepAxis::kBits:
      return "bits";
    case SweepAxis::kDirichlet:
      return "dirichlet";
  }
  return "unknown";
}

SweepAxis sweep_axis_from_string(std::string_view name) {
  for (auto axis : {SweepAxis::kNone, SweepAxis::kPower, SweepAxis::kLatency, SweepAxis::kDevices,
                    SweepAxis::kBits, SweepAxis::kDirichlet}) {
    if (name == to_string(axis)) return axis;
  }
  throw std::invalid_argument("unknown sweep axis '" + std::string(name) +
                              "'; valid options: none, power, latency, devices, bits, dirichlet");
}

double dbm_to_watts(double dbm) { return std::pow(10.0, dbm / 10.0) * 1e-3; }

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::vector<double> ExperimentConfig::sweep_grid() const {
  if (sweep_axis == SweepAxis::kNone) return {std::numeric_limits<double>::quiet_NaN()};
  return sweep_values;
}

void ExperimentConfig::validate() const {
  check(devices >= 1, "devices: must be >= 1");
  check(rounds >= 1, "rounds: must be >= 1");
  check(repetitions >= 1, "repetitions: must be >= 1");
  check(bandwidth_hz > 0.0, "bandwidth_hz: must be > 0");
  check(latency_s > 0.0, "latency_s: must be > 0");
  check(pathloss_exponent > 0.0, "pathloss_exponent: must be > 0");
  check(quant_bits >= 1 && quant_bits <= quantizer::kMaxBits, "quant_bits: must lie in [1, 24]");
  check(distance_min_m > 0.0, "distance_min_m: must be > 0");
  check(cell_radius_m >= distance_min_m, "cell_radius_m: must be >= distance_min_m");
  check(!strategies.empty(), "strategies: must list at least one strategy");
  check(std::set<Strategy>(strategies.begin(), strategies.end()).size() == strategies.size(),
        "strategies: duplicate entry");

  if (sweep_axis == SweepAxis::kNone) {
    check(sweep_values.empty(), "sweep_values: must be empty when sweep_axis = none");
  } else {
    check(!sweep_values.empty(), "sweep_values: grid must be nonempty");
    check(std::set<double>(sweep_values.begin(), sweep_values.end()).size() == sweep_values.size(),
          "sweep_values: duplicate entry");
  }
  for (double v : sweep_values) {
    switch (sweep_axis) {
      case SweepAxis::kDevices:
        check(v >= 1.0 && is_integer(v), "sweep_values: device counts must be integers >= 1");
        break;
      case SweepAxis::kBits:
        check(v >= 1.0 && v <= quantizer::kMaxBits && is_integer(v),
              "sweep_values: bits must be integers in [1, 24]");
        break;
      case SweepAxis::kLatency:
        check(v > 0.0, "sweep_values: latencies must be > 0");
        break;
      case SweepAxis::kDirichlet:
        check(v > 0.0, "sweep_values: concentrations must be > 0");
        check(partition == learner::PartitionScheme::kDirichlet,
              "sweep_axis: dirichlet sweep requires partition = dirichlet");
        break;
      default:
        break;
    }
  }

  for (double v : sweep_grid()) {
    try {
      learner_config(*this, v).validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  for (auto raw : split(text, '\n')) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string_view line = trim(raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string prefix = "line " + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) throw ConfigError(prefix + "expected 'key = value'");
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(),
                                 [&](const Field& f) { return f.key == key; });
    if (it == table.end()) throw ConfigError(prefix + "unknown key '" + std::string(key) + "'");
    if (!seen.insert(std::string(key)).second) {
      throw ConfigError(prefix + "duplicate key '" + std::string(key) + "'");
    }
    try {
      it->set(cfg, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(prefix + std::string(key) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return parse_config(text);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string serialize(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) {
    out += f.key;
    out += " = ";
    out += f.get(cfg);
    out += '\n';
  }
  return out;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : serialize(cfg)) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

std::vector<double> place_devices(const ExperimentConfig& cfg, std::size_t num_devices) {
  const double r0 = cfg.distance_min_m * cfg.distance_min_m;
  const double r1 = cfg.cell_radius_m * cfg.cell_radius_m;
  std::vector<double> d(num_devices);
  for (std::size_t k = 0; k < num_devices; ++k) {
    const double u = CounterRng::stream(cfg.seed, k, 0, 0, StreamTag::kPlacement).uniform();
    d[k] = std::sqrt(r0 + u * (r1 - r0));
  }
  return d;
}

learner::LearnerConfig learner_config(const ExperimentConfig& cfg, double sweep_value) {
  std::size_t devices = cfg.devices;
  double power_dbm = cfg.tx_power_dbm;
  double latency = cfg.latency_s;
  unsigned bits = cfg.quant_bits;
  double dirichlet = cfg.dirichlet;
  if (!std::isnan(sweep_value)) {
    switch (cfg.sweep_axis) {
      case SweepAxis::kPower:
        power_dbm = sweep_value;
        break;
      case SweepAxis::kLatency:
        latency = sweep_value;
        break;
      case SweepAxis::kDevices:
        devices = static_cast<std::size_t>(sweep_value);
        break;
      case SweepAxis::kBits:
        bits = static_cast<unsigned>(sweep_value);
        break;
      case SweepAxis::kDirichlet:
        dirichlet = sweep_value;
        break;
      case SweepAxis::kNone:
        break;
    }
  }

  learner::LearnerConfig lc;
  lc.model.kind = cfg.model;
  lc.model.hidden = cfg.hidden;
  lc.model.num_classes = cfg.classes;
  lc.model.num_features = cfg.features;
  lc.data.num_classes = cfg.classes;
  lc.data.num_features = cfg.features;
  lc.data.class_separation = cfg.class_separation;
  lc.data.noise_std = cfg.noise_std;
  lc.data.noise_spread = cfg.noise_spread;
  lc.data.feature_scale = cfg.feature_scale;
  lc.data.rotate_noise = cfg.rotate_noise;
  lc.data.test_size = cfg.test_size;

  lc.channel.bandwidth_total_hz = cfg.bandwidth_hz;
  lc.channel.noise_psd_w_per_hz = dbm_to_watts(cfg.noise_psd_dbm_hz);
  lc.channel.pathloss_exponent = cfg.pathloss_exponent;
  lc.channel.distances_m = place_devices(cfg, devices);
  lc.channel.tx_power_w.assign(devices, dbm_to_watts(power_dbm));
  lc.channel.latency_s = latency;
  lc.channel.model_dim = lc.model.dim();
  lc.channel.quant_bits = bits;
  lc.channel.range_bits = cfg.range_bits;

  lc.shard_size = cfg.shard_size;
  lc.partition = cfg.partition;
  lc.dirichlet = dirichlet;
  lc.rounds = cfg.rounds;
  lc.seed = cfg.seed;
  lc.eta = cfg.eta;
  lc.lipschitz = cfg.lipschitz;
  lc.compensation = cfg.compensation;
  lc.retransmit_limit = cfg.retransmit_limit;
  lc.solver = cfg.solver;
  lc.solver_tol = cfg.solver_tol;
  lc.delivery = cfg.delivery;
  lc.scheduling_fraction = cfg.scheduling_fraction;
  lc.delta_source = cfg.delta_source;
  return lc;
}

std::vector<double> CellResult::final_accuracy() const {
  std::vector<double> out;
  for (const auto& m : rows) {
    if (out.size() <= m.repetition) out.resize(m.repetition + 1, 0.0);
    out[m.repetition] = m.test_acc;
  }
  return out;
}

std::vector<double> CellResult::final_loss() const {
  std::vector<double> out;
  for (const auto& m : rows) {
    if (out.size() <= m.repetition) out.resize(m.repetition + 1, 0.0);
    out[m.repetition] = m.train_loss;
  }
  return out;
}

const CellResult& ExperimentResult::cell(Strategy strategy, double sweep_value) const {
  for (const auto& c : cells) {
    const bool same_value = (std::isnan(sweep_value) && std::isnan(c.sweep_value)) ||
                            c.sweep_value == sweep_value;
    if (c.strategy == strategy && same_value) return c;
  }
  throw std::out_of_range("no cell for strategy " + std::string(learner::to_string(strategy)) +
                          " at sweep value " + format_double(sweep_value));
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::size_t workers) {
  cfg.validate();
  ExperimentResult result;
  result.hash = config_hash(cfg);
  result.seed = cfg.seed;
  for (double v : cfg.sweep_grid()) {
    for (Strategy s : cfg.strategies) result.cells.push_back(CellResult{s, v, {}});
  }

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  std::string error_context;

  auto work = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= result.cells.size()) return;
      CellResult& cell = result.cells[i];
      try {
        const auto lc = learner_config(cfg, cell.sweep_value);
        for (std::size_t rep = 0; rep < cfg.repetitions; ++rep) {
          auto rows = learner::run_repetition(lc, cell.strategy, rep);
          cell.rows.insert(cell.rows.end(), rows.begin(), rows.end());
        }
      } catch (const std::exception& e) {
        std::lock_guard lock(error_mutex);
        if (!first_error) {
          first_error = std::current_exception();
          error_context = "strategy " + std::string(learner::to_string(cell.strategy)) +
                          ", sweep value " + format_double(cell.sweep_value) + ": " + e.what();
        }
        next = result.cells.size();
        return;
      }
    }
  };

  const std::size_t n = std::clamp<std::size_t>(workers, 1, result.cells.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  if (first_error) throw std::runtime_error(error_context);
  return result;
}

std::string header_line(std::uint64_t hash, std::uint64_t seed) {
  return "# config_hash=" + hash_hex(hash) + " seed=" + std::to_string(seed) + "\n";
}

namespace {

std::string sweep_field(double v) { return std::isnan(v) ? std::string() : format_double(v); }

double mean(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

double sample_std(const std::vector<double>& x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

}  // namespace

std::string metrics_csv(const ExperimentResult& result, const CellResult& cell) {
  std::string out = header_line(result.hash, result.seed);
  out += kCsvColumns;
  out += '\n';
  const std::string strategy(learner::to_string(cell.strategy));
  const std::string sweep = sweep_field(cell.sweep_value);
  for (const auto& m : cell.rows) {
    out += strategy + ',' + sweep + ',' + std::to_string(m.repetition) + ',' +
           std::to_string(m.round) + ',' + format_double(m.elapsed_s) + ',' +
           format_double(m.train_loss) + ',' + format_double(m.test_acc) + ',' +
           format_double(m.bound_value) + ',' + format_double(m.mean_q) + ',' +
           format_double(m.mean_p) + ',' + std::to_string(m.devices_rejected) + ',' +
           std::to_string(m.solver_outer_iters) + '\n';
  }
  return out;
}

std::string summary_csv(const ExperimentResult& result) {
  std::string out = header_line(result.hash, result.seed);
  out +=
      "strategy,sweep_value,repetitions,final_test_acc_mean,final_test_acc_std,"
      "final_train_loss_mean,final_train_loss_std,elapsed_s\n";
  for (const auto& cell : result.cells) {
    const auto acc = cell.final_accuracy();
    const auto loss = cell.final_loss();
    const double elapsed = cell.rows.empty() ? 0.0 : cell.rows.back().elapsed_s;
    out += std::string(learner::to_string(cell.strategy)) + ',' + sweep_field(cell.sweep_value) +
           ',' + std::to_string(acc.size()) + ',' + format_double(mean(acc)) + ',' +
           format_double(sample_std(acc)) + ',' + format_double(mean(loss)) + ',' +
           format_double(sample_std(loss)) + ',' + format_double(elapsed) + '\n';
  }
  return out;
}

std::string metrics_file_name(const ExperimentConfig& cfg, const CellResult& cell) {
  std::string name = "metrics_" + std::string(learner::to_string(cell.strategy));
  if (cfg.sweep_axis != SweepAxis::kNone) {
    name += '_' + std::string(to_string(cfg.sweep_axis)) + '_' + format_double(cell.sweep_value);
  }
  return name + ".csv";
}

std::vector<std::filesystem::path> write_outputs(const ExperimentConfig& cfg,
                                                 const ExperimentResult& result,
                                                 const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  auto write = [&](const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    written.push_back(path);
  };
  for (const auto& cell : result.cells) {
    write(dir / metrics_file_name(cfg, cell), metrics_csv(result, cell));
  }
  write(dir / "summary.csv", summary_csv(result));
  return written;
}

std::filesystem::path default_output_dir() {
  const char* env = std::getenv(kOutputDirEnv);
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("spfl_out");
}

SolveProblem parse_coefficients(std::string_view text) {
  SolveProblem prob;
  prob.channel.bandwidth_total_hz = 10e6;
  prob.channel.pathloss_exponent = 3.0;
  prob.channel.latency_s = 0.5;
  prob.channel.model_dim = 0;
  double noise_dbm_hz = -174.0;
  std::set<std::string, std::less<>> seen;

  std::size_t line_no = 0;
  for (auto raw : split(text, '\n')) {
    ++line_no;
    const std::string_view line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const std::string prefix = "line " + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(prefix + "expected 'key = value'");
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    if (key != "device" && !seen.insert(std::string(key)).second) {
      throw ConfigError(prefix + "duplicate key '" + std::string(key) + "'");
    }
    try {
      if (key == "device") {
        std::vector<double> cols;
        for (auto item : split(value, ' ')) {
          if (!item.empty()) cols.push_back(parse_double(item));
        }
        if (cols.size() != 6) {
          throw std::invalid_argument("expected 6 columns: A B C D distance_m tx_power_dbm");
        }
        prob.coefficients.push_back({cols[0], cols[1], cols[2], cols[3]});
        prob.channel.distances_m.push_back(cols[4]);
        prob.channel.tx_power_w.push_back(dbm_to_watts(cols[5]));
      } else if (key == "bandwidth_hz") {
        prob.channel.bandwidth_total_hz = parse_double(value);
      } else if (key == "noise_psd_dbm_hz") {
        noise_dbm_hz = parse_double(value);
      } else if (key == "pathloss_exponent") {
        prob.channel.pathloss_exponent = parse_double(value);
      } else if (key == "latency_s") {
        prob.channel.latency_s = parse_double(value);
      } else if (key == "model_dim") {
        prob.channel.model_dim = parse_uint(value);
      } else if (key == "quant_bits") {
        prob.channel.quant_bits = parse_unsigned(value);
      } else if (key == "range_bits") {
        prob.channel.range_bits = parse_unsigned(value);
      } else if (key == "solver") {
        prob.method = allocator::bandwidth_method_from_string(value);
      } else if (key == "tol") {
        prob.tol = parse_double(value);
      } else {
        throw ConfigError(prefix + "unknown key '" + std::string(key) + "'");
      }
    } catch (const std::invalid_argument& e) {
      throw ConfigError(prefix + std::string(key) + ": " + e.what());
    }
  }
  prob.channel.noise_psd_w_per_hz = dbm_to_watts(noise_dbm_hz);
  if (prob.coefficients.empty()) throw ConfigError("device: at least one device line required");
  if (prob.channel.model_dim == 0) throw ConfigError("model_dim: required and must be >= 1");
  if (!(prob.tol > 0.0)) throw ConfigError("tol: must be > 0");
  try {
    prob.channel.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return prob;
}

SolveProblem load_coefficients(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return parse_coefficients(text);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string format_solution(const SolveProblem& problem,
                            const allocator::AllocationResult& result) {
  const auto& d = result.diagnostics;
  std::string out;
  out += "method = " + std::string(allocator::to_string(d.method)) + '\n';
  out += "objective = " + format_double(result.objective) + '\n';
  out += "outer_iterations = " + std::to_string(d.outer_iterations) + '\n';
  out += "inner_iterations = " + std::to_string(d.inner_iterations) + '\n';
  out += "kkt_residual = " + format_double(d.kkt_residual) + '\n';
  double max_residual = 0.0;
  for (double r : d.root_residuals) max_residual = std::max(max_residual, r);
  out += "max_root_residual = " + format_double(max_residual) + '\n';
  out += "hit_iteration_cap = " + std::string(d.hit_iteration_cap ? "true" : "false") + '\n';
  if (!d.warning.empty()) out += "warning = " + d.warning + '\n';
  out += "# device alpha beta q_sign p_modulus\n";
  const auto& a = result.allocation;
  for (std::size_t k = 0; k < a.alpha.size(); ++k) {
    out += "device = " + std::to_string(k) + ' ' + format_double(a.alpha[k]) + ' ' +
           format_double(a.beta[k]) + ' ' +
           format_double(channel::q_sign(a.alpha[k], a.beta[k], problem.channel, k)) + ' ' +
           format_double(channel::p_modulus(a.alpha[k], a.beta[k], problem.channel, k)) + '\n';
  }
  return out;
}

}  // namespace spfl::cli
