#pragma once

// Distortion, divergence and Bjontegaard metrics.

#include "idemlab/errors.hpp"
#include "idemlab/transform_codec.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace idemlab {

inline constexpr double kPsnrCap = 99.0;

// Mean squared error over every coordinate of every vector.
inline double mse(std::span<const Vector> a, std::span<const Vector> b) {
  if (a.size() != b.size()) throw LengthMismatch("mse: sets differ in size");
  if (a.empty()) throw InvalidArgument("mse: empty sets");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) throw LengthMismatch("mse: vectors differ in dimension");
    total += (a[i] - b[i]).squaredNorm();
    count += static_cast<std::size_t>(a[i].size());
  }
  return total / static_cast<double>(count);
}

inline double psnr(double mse_value, double peak) {
  if (!(peak > 0.0)) throw InvalidArgument("psnr: peak must be positive");
  if (!(mse_value >= 0.0)) throw InvalidArgument("psnr: mse must be non-negative");
  if (mse_value < peak * peak * 1e-9 * 0.9) return kPsnrCap;
  return 10.0 * std::log10(peak * peak / mse_value);
}

struct Moments {
  Vector mean;
  Matrix covariance;  // unbiased
};

inline Moments fit_moments(std::span<const Vector> samples) {
  if (samples.empty()) throw DegenerateMoments("no samples");
  const Eigen::Index d = samples.front().size();
  if (static_cast<Eigen::Index>(samples.size()) <= d + 1)
    throw DegenerateMoments("need more than d+1 samples");
  Moments m{Vector::Zero(d), Matrix::Zero(d, d)};
  for (const auto& x : samples) {
    if (x.size() != d) throw LengthMismatch("samples differ in dimension");
    m.mean += x;
  }
  m.mean /= static_cast<double>(samples.size());
  for (const auto& x : samples) m.covariance.noalias() += (x - m.mean) * (x - m.mean).transpose();
  m.covariance /= static_cast<double>(samples.size() - 1);
  if (!m.mean.allFinite() || !m.covariance.allFinite()) throw DegenerateMoments("non-finite moments");
  return m;
}

// Symmetric PSD square root with negative eigenvalues clipped to zero.
inline Matrix psd_sqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (m + m.transpose()));
  if (eig.info() != Eigen::Success) throw DegenerateMoments("eigendecomposition failed");
  const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

// Squared Frechet distance between Gaussians with the given moments. The
// cross term uses tr sqrt(sqrt(A) B sqrt(A)), which is symmetric in A and B.
inline double frechet_distance(const Moments& a, const Moments& b) {
  if (a.mean.size() != b.mean.size()) throw LengthMismatch("frechet: dimensions differ");
  const Matrix root_a = psd_sqrt(a.covariance);
  const Matrix inner = root_a * b.covariance * root_a;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw DegenerateMoments("eigendecomposition failed");
  const double cross = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double fd = (a.mean - b.mean).squaredNorm() + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
  return std::max(fd, 0.0);
}

inline double gaussian_frechet(std::span<const Vector> a, std::span<const Vector> b) {
  return frechet_distance(fit_moments(a), fit_moments(b));
}

inline double wasserstein1_1d(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw LengthMismatch("wasserstein1_1d: sample counts differ");
  if (a.empty()) return 0.0;
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  double total = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) total += std::abs(sa[i] - sb[i]);
  return total / static_cast<double>(sa.size());
}

inline double tv_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw LengthMismatch("tv_distance: pmf lengths differ");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += std::abs(p[i] - q[i]);
  return 0.5 * total;
}

// Mean ||x - g0(f0(x))||^2 over the set.
inline double recompression_mse(const TransformCodec& codec, std::span<const Vector> reconstructions) {
  if (reconstructions.empty()) throw InvalidArgument("recompression_mse: empty set");
  double total = 0.0;
  for (const auto& x : reconstructions) total += (x - codec.decode(codec.encode(x))).squaredNorm();
  return total / static_cast<double>(reconstructions.size());
}

struct RDPoint {
  double bpp = 0.0;
  double mse = 0.0;
  double psnr = 0.0;
  double divergence = 0.0;
};

struct RDCurve {
  std::string label;
  std::vector<RDPoint> points;

  void validate() const {
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto& p = points[i];
      if (!std::isfinite(p.bpp) || !(p.bpp > 0.0)) throw InvalidArgument("RDCurve: bpp must be positive");
      if (!(p.mse >= 0.0) || !(p.divergence >= 0.0)) throw InvalidArgument("RDCurve: negative mse or divergence");
      if (i > 0 && !(p.bpp > points[i - 1].bpp)) throw InvalidArgument("RDCurve: bpp must be strictly increasing");
    }
  }
};

enum class QualityAxis { psnr, divergence };

namespace detail {

// Monotone piecewise-cubic Hermite interpolant (Fritsch-Carlson slopes,
// non-centered three-point end conditions).
class Pchip {
 public:
  Pchip(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
    const std::size_t n = x_.size();
    d_.assign(n, 0.0);
    std::vector<double> h(n - 1), delta(n - 1);
    for (std::size_t k = 0; k + 1 < n; ++k) {
      h[k] = x_[k + 1] - x_[k];
      delta[k] = (y_[k + 1] - y_[k]) / h[k];
    }
    if (n == 2) {
      d_[0] = d_[1] = delta[0];
      return;
    }
    for (std::size_t k = 1; k + 1 < n; ++k) {
      if (delta[k - 1] * delta[k] <= 0.0) continue;
      const double w1 = 2.0 * h[k] + h[k - 1];
      const double w2 = h[k] + 2.0 * h[k - 1];
      d_[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
    }
    d_[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    d_[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
  }

  double operator()(double x) const {
    auto it = std::upper_bound(x_.begin(), x_.end(), x);
    std::size_t k = it == x_.begin() ? 0 : static_cast<std::size_t>(it - x_.begin()) - 1;
    k = std::min(k, x_.size() - 2);
    const double h = x_[k + 1] - x_[k];
    const double t = (x - x_[k]) / h;
    const double t2 = t * t, t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * y_[k] + (t3 - 2 * t2 + t) * h * d_[k] + (-2 * t3 + 3 * t2) * y_[k + 1] +
           (t3 - t2) * h * d_[k + 1];
  }

  const std::vector<double>& knots() const noexcept { return x_; }

 private:
  static double end_slope(double h0, double h1, double m0, double m1) {
    auto sign = [](double v) { return (v > 0.0) - (v < 0.0); };
    double d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if (sign(d) != sign(m0)) d = 0.0;
    else if (sign(m0) != sign(m1) && std::abs(d) > 3.0 * std::abs(m0)) d = 3.0 * m0;
    return d;
  }

  std::vector<double> x_, y_, d_;
};

inline Pchip quality_interpolant(const RDCurve& c, QualityAxis axis) {
  c.validate();
  if (c.points.size() < 4) throw InvalidArgument("bd_metric: curves need at least 4 points");
  std::vector<double> x, y;
  for (const auto& p : c.points) {
    x.push_back(std::log(p.bpp));
    y.push_back(axis == QualityAxis::psnr ? p.psnr : p.divergence);
  }
  return Pchip(std::move(x), std::move(y));
}

}  // namespace detail

// Average of (quality_B - quality_A) over the shared log-rate interval. For
// psnr a positive value means B is better; for divergence a negative value
// means B is better.
inline double bd_metric(const RDCurve& a, const RDCurve& b, QualityAxis axis) {
  const auto fa = detail::quality_interpolant(a, axis);
  const auto fb = detail::quality_interpolant(b, axis);
  const double lo = std::max(fa.knots().front(), fb.knots().front());
  const double hi = std::min(fa.knots().back(), fb.knots().back());
  if (!(hi > lo)) throw NoOverlap("bd_metric: rate ranges do not overlap");

  std::vector<double> breaks{lo, hi};
  for (const auto* f : {&fa, &fb})
    for (double k : f->knots())
      if (k > lo && k < hi) breaks.push_back(k);
  std::sort(breaks.begin(), breaks.end());
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());

  // Two-point Gauss-Legendre per segment: exact for the cubic pieces.
  const double g = 1.0 / std::sqrt(3.0);
  double integral = 0.0;
  for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
    const double mid = 0.5 * (breaks[i] + breaks[i + 1]);
    const double half = 0.5 * (breaks[i + 1] - breaks[i]);
    for (double node : {mid - half * g, mid + half * g}) integral += half * (fb(node) - fa(node));
  }
  return integral / (hi - lo);
}

// Shortest decimal that reads back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void write_rd_csv(std::ostream& out, std::span<const RDCurve> curves) {
  out << "label,bpp,mse,psnr,divergence\n";
  for (const auto& c : curves)
    for (const auto& p : c.points)
      out << c.label << ',' << format_double(p.bpp) << ',' << format_double(p.mse) << ','
          << format_double(p.psnr) << ',' << format_double(p.divergence) << '\n';
}

// Rows are grouped into curves by label, in order of first appearance.
inline std::vector<RDCurve> read_rd_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "label,bpp,mse,psnr,divergence")
    throw InvalidArgument("rd csv: missing or wrong header");
  std::vector<RDCurve> curves;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != 5) throw InvalidArgument("rd csv: row " + std::to_string(row) + " needs 5 columns");
    double values[4];
    for (int i = 0; i < 4; ++i) {
      const auto& c = cells[i + 1];
      auto res = std::from_chars(c.data(), c.data() + c.size(), values[i]);
      if (res.ec != std::errc() || res.ptr != c.data() + c.size())
        throw InvalidArgument("rd csv: row " + std::to_string(row) + " has a malformed number");
    }
    auto it = std::find_if(curves.begin(), curves.end(), [&](const RDCurve& c) { return c.label == cells[0]; });
    if (it == curves.end()) {
      curves.push_back({cells[0], {}});
      it = curves.end() - 1;
    }
    it->points.push_back({values[0], values[1], values[2], values[3]});
  }
  for (const auto& c : curves) c.validate();
  return curves;
}

}  // namespace idemlab
