#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace idemlab {

using Rng = std::mt19937_64;

// Independent stream for (seed, task, purpose). Results never depend on
// which thread runs a task, only on these three numbers.
inline Rng derive_stream(std::uint64_t seed, std::uint64_t task, std::uint32_t purpose = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(task), static_cast<std::uint32_t>(task >> 32),
                    purpose};
  return Rng(seq);
}

inline Eigen::VectorXd standard_normal(Eigen::Index dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(dim);
  for (Eigen::Index i = 0; i < dim; ++i) z[i] = normal(rng);
  return z;
}

}  // namespace idemlab
