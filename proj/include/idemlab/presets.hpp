#pragma once

// Canonical sources used by the shipped experiment configs and the tests.

#include "idemlab/diffusion.hpp"

namespace idemlab::presets {

// Three-component 2-D mixture with zero mean and total covariance close to I,
// so the fully noised marginal matches N(0, I).
inline GmmSource benchmark_source() {
  Eigen::Matrix2d c1, c2, c3;
  c1 << 0.30, 0.12, 0.12, 0.20;
  c2 << 0.35, -0.10, -0.10, 0.25;
  c3 << 0.20, 0.05, 0.05, 0.30;
  return {{0.3, 0.4, 0.3},
          {Eigen::Vector2d(-1.2, -0.6), Eigen::Vector2d(0.15, 1.05), Eigen::Vector2d(1.0, -0.8)},
          {c1, c2, c3}};
}

}  // namespace idemlab::presets
