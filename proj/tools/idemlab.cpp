#include "idemlab/experiment.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

namespace {

enum Exit { kPassed = 0, kChecksFailed = 1, kConfigError = 2, kRuntimeError = 3 };

int run_command(const std::string& config_path, const std::optional<std::string>& out_dir, std::uint64_t seed_offset,
                std::optional<unsigned> threads) {
  using namespace idemlab;
  ExperimentConfig cfg;
  try {
    cfg = config::load_experiment(config_path);
  } catch (const ConfigError& e) {
    std::cerr << config_path << ": " << e.what() << '\n';
    return kConfigError;
  }
  if (threads) cfg.threads = *threads;
  const std::string dir = out_dir.value_or(cfg.output);

  try {
    const RunOutput out = run_experiment(cfg, seed_offset);
    write_outputs(dir, cfg, out, seed_offset);
    std::size_t failed = 0;
    for (const auto& c : out.checks) {
      std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " (seed " << c.seed << ")\n";
      failed += !c.passed;
    }
    std::cout << kind_name(cfg.kind) << ": " << (out.checks.size() - failed) << "/" << out.checks.size()
              << " checks passed; results in " << dir << '\n';
    return failed == 0 ? kPassed : kChecksFailed;
  } catch (const ConfigError& e) {
    std::cerr << config_path << ": " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"idemlab: idempotence and posterior-sampling experiments"};
  app.set_version_flag("--version", idemlab::kVersion);
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run the experiment described by a JSON config");
  std::string config_path;
  std::optional<std::string> out_dir;
  std::uint64_t seed_offset = 0;
  std::optional<unsigned> threads;
  run->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory (default: the config's \"output\")");
  run->add_option("--seed-offset", seed_offset, "Added to every configured seed");
  run->add_option("--threads", threads, "Worker threads (0 = all cores); results do not depend on it");

  CLI11_PARSE(app, argc, argv);
  return run_command(config_path, out_dir, seed_offset, threads);
}
