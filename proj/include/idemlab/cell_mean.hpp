#pragma once

// Conditional-mean decoder E[X | f0(X) = y] for a Gaussian-mixture source,
// by tensor-product Gauss-Legendre quadrature over the quantization cell in
// transform coordinates.

#include "idemlab/diffusion.hpp"
#include "idemlab/errors.hpp"
#include "idemlab/transform_codec.hpp"

#include <array>
#include <limits>
#include <cmath>
#include <map>
#include <mutex>
#include <vector>

namespace idemlab {

class CellMeanDecoder {
 public:
  static constexpr std::size_t kMaxNodes = 4'000'000;

  CellMeanDecoder(const GmmSource& source, const TransformCodec& codec, double tail_sigmas = 10.0)
      : codec_(codec), rotated_(rotate(source, codec.transform())), density_(rotated_), tail_(tail_sigmas) {
    if (source.dim() != codec.dim()) throw LengthMismatch("CellMeanDecoder: dimensions differ");
    const Eigen::Index d = codec.dim();
    const Matrix cov = rotated_.covariance();
    center_ = rotated_.mean();
    spread_.resize(d);
    panel_.resize(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      spread_[i] = std::sqrt(cov(i, i));
      double narrowest = spread_[i];
      for (const auto& c : rotated_.covariances()) narrowest = std::min(narrowest, std::sqrt(c(i, i)));
      panel_[i] = 0.25 * narrowest;
    }
  }

  // Cached per symbol vector; safe to call from several threads.
  Vector decode(const Symbols& y) const {
    {
      std::lock_guard lock(mutex_);
      if (auto it = cache_.find(y.indices); it != cache_.end()) return it->second;
    }
    Vector x = compute(y);
    std::lock_guard lock(mutex_);
    cache_.emplace(y.indices, x);
    return x;
  }

 private:
  static GmmSource rotate(const GmmSource& s, const Matrix& a) {
    std::vector<Vector> means;
    std::vector<Matrix> covs;
    for (std::size_t i = 0; i < s.components(); ++i) {
      means.push_back(a.transpose() * s.means()[i]);
      Matrix c = a.transpose() * s.covariances()[i] * a;
      covs.push_back(0.5 * (c + c.transpose()));
    }
    return {s.weights(), std::move(means), std::move(covs)};
  }

  // Bounds of u_i = (A^T x)_i for symbol index k, truncated to the tails.
  std::pair<double, double> interval(Eigen::Index i, std::int32_t k) const {
    const double step = codec_.step()[i];
    const int r = codec_.symbol_range();
    double lo = k == -r ? -std::numeric_limits<double>::infinity() : codec_.companding().inverse(step * (k - 0.5));
    double hi = k == r ? std::numeric_limits<double>::infinity() : codec_.companding().inverse(step * (k + 0.5));
    lo = std::max(lo, center_[i] - tail_ * spread_[i]);
    hi = std::min(hi, center_[i] + tail_ * spread_[i]);
    return {lo, hi};
  }

  Vector compute(const Symbols& y) const {
    if (!codec_.in_range(y)) throw OutOfRange("CellMeanDecoder: symbols out of range");
    static constexpr std::array<double, 6> nodes{-0.9324695142031521, -0.6612093864662645, -0.2386191860831969,
                                                 0.2386191860831969,  0.6612093864662645,  0.9324695142031521};
    static constexpr std::array<double, 6> weights{0.1713244923791704, 0.3607615730481386, 0.4679139345726910,
                                                   0.4679139345726910, 0.3607615730481386, 0.1713244923791704};
    const Eigen::Index d = codec_.dim();
    std::vector<std::vector<double>> pts(d), wts(d);
    std::size_t total_nodes = 1;
    for (Eigen::Index i = 0; i < d; ++i) {
      auto [lo, hi] = interval(i, y.indices[i]);
      if (!(hi > lo)) throw ZeroMassCode("CellMeanDecoder: cell outside the source support");
      const auto panels = static_cast<std::size_t>(std::ceil((hi - lo) / panel_[i]));
      const double h = (hi - lo) / static_cast<double>(panels);
      for (std::size_t p = 0; p < panels; ++p) {
        const double mid = lo + (p + 0.5) * h;
        for (std::size_t q = 0; q < nodes.size(); ++q) {
          pts[i].push_back(mid + 0.5 * h * nodes[q]);
          wts[i].push_back(0.5 * h * weights[q]);
        }
      }
      total_nodes *= pts[i].size();
      if (total_nodes > kMaxNodes) throw InvalidArgument("CellMeanDecoder: quadrature grid too large");
    }

    // Log-domain accumulation relative to the first node's density.
    std::vector<std::size_t> idx(d, 0);
    Vector u(d), moment = Vector::Zero(d);
    double mass = 0.0;
    double ref = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t n = 0; n < total_nodes; ++n) {
      double w = 1.0;
      for (Eigen::Index i = 0; i < d; ++i) {
        u[i] = pts[i][idx[i]];
        w *= wts[i][idx[i]];
      }
      const double lp = density_.log_density(u);
      if (std::isnan(ref) && std::isfinite(lp)) ref = lp;
      if (std::isfinite(lp)) {
        const double scale = std::exp(lp - ref);
        if (scale > 1e200) {  // rebase to keep the running sums finite
          const double shrink = std::exp(ref - lp);
          mass *= shrink;
          moment *= shrink;
          ref = lp;
        }
        const double p = w * std::exp(lp - ref);
        mass += p;
        moment += p * u;
      }
      for (Eigen::Index i = 0; i < d; ++i) {
        if (++idx[i] < pts[i].size()) break;
        idx[i] = 0;
      }
    }
    if (!(mass > 0.0) || !std::isfinite(mass)) throw ZeroMassCode("CellMeanDecoder: cell has no mass");
    return codec_.transform() * (moment / mass);
  }

  TransformCodec codec_;
  GmmSource rotated_;
  MixtureDensity density_;
  double tail_;
  Vector center_, spread_, panel_;
  mutable std::mutex mutex_;
  mutable std::map<std::vector<std::int32_t>, Vector> cache_;
};

}  // namespace idemlab
