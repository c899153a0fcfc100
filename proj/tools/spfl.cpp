#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <thread>

#include "spfl/allocator.hpp"
#include "spfl/cli.hpp"

namespace {

int run_command(const std::string& config_path, std::size_t workers, const std::string& out_dir) {
  const auto cfg = spfl::cli::load_config(config_path);
  const auto result = spfl::cli::run_experiment(cfg, workers);
  const auto dir = out_dir.empty() ? spfl::cli::default_output_dir() : std::filesystem::path(out_dir);
  const auto written = spfl::cli::write_outputs(cfg, result, dir);
  std::cout << "config_hash " << spfl::cli::hash_hex(result.hash) << "\n";
  for (const auto& p : written) std::cout << p.string() << "\n";
  return 0;
}

int validate_command(const std::string& config_path) {
  const auto cfg = spfl::cli::load_config(config_path);
  std::cout << "# config_hash=" << spfl::cli::hash_hex(spfl::cli::config_hash(cfg)) << "\n"
            << spfl::cli::serialize(cfg);
  return 0;
}

int solve_command(const std::string& coeffs_path) {
  const auto prob = spfl::cli::load_coefficients(coeffs_path);
  spfl::allocator::AlternateOptions opts;
  opts.method = prob.method;
  opts.tol = prob.tol;
  const auto result = spfl::allocator::alternate(prob.coefficients, prob.channel, opts);
  std::cout << spfl::cli::format_solution(prob, result);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sign-prioritized federated learning simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  auto* run = app.add_subcommand("run", "Run every cell of an experiment and write CSV files");
  run->add_option("--config", config_path, "Experiment config file")->required();
  run->add_option("--workers", workers, "Maximum number of cells run at once")
      ->check(CLI::PositiveNumber);
  run->add_option("--out", out_dir,
                  std::string("Output directory (default: $") + spfl::cli::kOutputDirEnv +
                      " or ./spfl_out)");

  auto* validate = app.add_subcommand("validate", "Check a config and print it with defaults");
  validate->add_option("--config", config_path, "Experiment config file")->required();

  std::string coeffs_path;
  auto* solve = app.add_subcommand("solve", "Solve one power/bandwidth allocation problem");
  solve->add_option("--coeffs", coeffs_path, "Coefficients file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return run_command(config_path, workers, out_dir);
    if (*validate) return validate_command(config_path);
    if (*solve) return solve_command(coeffs_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
