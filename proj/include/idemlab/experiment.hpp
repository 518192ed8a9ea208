#pragma once

// Config-driven experiment runs and report emission.

#include "idemlab/bitstream.hpp"
#include "idemlab/experiment/config.hpp"
#include "idemlab/experiment/runners.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace idemlab {

inline constexpr const char* kVersion = "1.0.0";

inline Json version_info() {
  return {{"idemlab", kVersion},
          {"bitstream_format", kBitstreamVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"compiler", __VERSION__}};
}

inline std::vector<std::uint64_t> effective_seeds(const ExperimentConfig& cfg, std::uint64_t offset) {
  std::vector<std::uint64_t> out;
  for (auto s : cfg.seeds) out.push_back(s + offset);
  return out;
}

// Runs every seed in memory. Throws on any library error; nothing is
// written here.
inline RunOutput run_experiment(const ExperimentConfig& cfg, std::uint64_t seed_offset = 0) {
  RunOutput out;
  for (std::uint64_t seed : effective_seeds(cfg, seed_offset)) {
    SeedReport rep(out, seed);
    switch (cfg.kind) {
      case ExperimentKind::discrete_verify: run_discrete_verify(cfg, rep); break;
      case ExperimentKind::rd_sweep: run_rd_sweep(cfg, rep); break;
      case ExperimentKind::invert: run_invert(cfg, rep); break;
      case ExperimentKind::pd_sweep: run_pd_sweep(cfg, rep); break;
      case ExperimentKind::idem_audit: run_idem_audit(cfg, rep); break;
    }
  }
  return out;
}

inline Json summary_json(const ExperimentConfig& cfg, const RunOutput& out) {
  Json checks = Json::array();
  std::size_t failed = 0;
  for (const auto& c : out.checks) {
    failed += !c.passed;
    checks.push_back({{"name", c.name}, {"seed", c.seed}, {"passed", c.passed}, {"witness", c.witness}});
  }
  return {{"experiment", kind_name(cfg.kind)},
          {"passed", failed == 0},
          {"checks_total", out.checks.size()},
          {"checks_failed", failed},
          {"checks", checks}};
}

inline Json manifest_json(const ExperimentConfig& cfg, const RunOutput& out, std::uint64_t seed_offset) {
  Json files = Json::array({"manifest.json", "summary.json"});
  for (const auto& [name, content] : out.files) files.push_back(name);
  return {{"tool", "idemlab"},
          {"versions", version_info()},
          {"experiment", kind_name(cfg.kind)},
          {"seeds", {{"configured", cfg.seeds}, {"offset", seed_offset}, {"effective", effective_seeds(cfg, seed_offset)}}},
          {"config", cfg.echo},
          {"results", out.results},
          {"files", files}};
}

// Writes all files under dir. On failure every file written by this call is
// removed, along with directories this call created, and the error rethrown.
inline std::vector<std::filesystem::path> write_outputs(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                                                        const RunOutput& out, std::uint64_t seed_offset) {
  namespace fs = std::filesystem;
  std::vector<std::pair<std::string, std::string>> files{
      {"manifest.json", manifest_json(cfg, out, seed_offset).dump(2) + "\n"},
      {"summary.json", summary_json(cfg, out).dump(2) + "\n"}};
  files.insert(files.end(), out.files.begin(), out.files.end());

  std::vector<fs::path> written, created;
  auto make_dirs = [&](const fs::path& p) {
    std::vector<fs::path> missing;
    for (fs::path q = p; !q.empty() && !fs::exists(q); q = q.parent_path()) missing.push_back(q);
    for (auto it = missing.rbegin(); it != missing.rend(); ++it) {
      fs::create_directory(*it);
      created.push_back(*it);
    }
  };
  try {
    make_dirs(dir);
    for (const auto& [name, content] : files) {
      const fs::path path = dir / name;
      make_dirs(path.parent_path());
      std::ofstream f(path, std::ios::binary | std::ios::trunc);
      if (!f) throw Error("cannot write " + path.string());
      written.push_back(path);
      f << content;
      f.close();
      if (!f) throw Error("write failed for " + path.string());
    }
  } catch (...) {
    std::error_code ec;
    for (const auto& p : written) fs::remove(p, ec);
    for (auto it = created.rbegin(); it != created.rend(); ++it) fs::remove(*it, ec);
    throw;
  }
  return written;
}

}  // namespace idemlab
