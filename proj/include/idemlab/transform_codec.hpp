#pragma once

// The MSE base codec: orthogonal transform, optional power companding,
// uniform scalar quantizer with clamping, and a static per-dimension entropy
// model for the range coder.

#include "idemlab/errors.hpp"
#include "idemlab/range_coder.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace idemlab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct Symbols {
  std::vector<std::int32_t> indices;

  std::size_t size() const noexcept { return indices.size(); }
  friend bool operator==(const Symbols&, const Symbols&) = default;
};

inline double squared_distance(const Symbols& a, const Symbols& b) {
  if (a.size() != b.size()) throw LengthMismatch("symbol vectors differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = static_cast<double>(a.indices[i]) - b.indices[i];
    total += diff * diff;
  }
  return total;
}

// Sign-preserving power law v = sign(u) |u|^gamma, gamma in (0, 1].
class Companding {
 public:
  Companding() = default;
  explicit Companding(double gamma) : gamma_(gamma) {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw InvalidArgument("companding gamma must be in (0, 1]");
  }

  static Companding none() { return {}; }

  bool enabled() const noexcept { return gamma_ != 1.0; }
  double gamma() const noexcept { return gamma_; }

  double forward(double u) const {
    if (!enabled()) return u;
    return std::copysign(std::pow(std::abs(u), gamma_), u);
  }

  double inverse(double v) const {
    if (!enabled()) return v;
    return std::copysign(std::pow(std::abs(v), 1.0 / gamma_), v);
  }

  // d forward / du, evaluated no closer to zero than `floor` where the power
  // law is singular.
  double derivative(double u, double floor) const {
    if (!enabled()) return 1.0;
    return gamma_ * std::pow(std::max(std::abs(u), floor), gamma_ - 1.0);
  }

  double inverse_derivative(double v) const {
    if (!enabled()) return 1.0;
    const double p = 1.0 / gamma_;
    return p * std::pow(std::abs(v), p - 1.0);
  }

 private:
  double gamma_ = 1.0;
};

// Forward symbols together with the straight-through derivative ds/dx.
struct SteEncoding {
  Symbols symbols;
  Matrix jacobian;
};

struct FitOptions {
  Vector step;              // one entry, or one per dimension
  Companding companding{};
  int symbol_range = 0;     // 0 picks R from the data
};

class TransformCodec {
 public:
  static constexpr int kMaxSymbolRange = 32767;

  TransformCodec(Matrix transform, Vector step, Companding companding, int symbol_range,
                 std::vector<FrequencyTable> entropy_model)
      : transform_(std::move(transform)),
        step_(std::move(step)),
        companding_(companding),
        symbol_range_(symbol_range),
        entropy_model_(std::move(entropy_model)) {
    const Eigen::Index d = transform_.rows();
    if (d == 0 || transform_.cols() != d) throw InvalidArgument("transform must be square");
    if (d > 65535) throw InvalidArgument("dimension exceeds 65535");
    const double ortho = (transform_.transpose() * transform_ - Matrix::Identity(d, d)).cwiseAbs().maxCoeff();
    if (!(ortho < 1e-10)) throw InvalidArgument("transform is not orthogonal");
    if (step_.size() == 1 && d > 1) step_ = Vector::Constant(d, step_[0]);
    if (step_.size() != d) throw InvalidArgument("step must have one entry per dimension");
    for (Eigen::Index i = 0; i < d; ++i)
      if (!(step_[i] > 0.0) || !std::isfinite(step_[i])) throw InvalidArgument("step must be positive");
    if (symbol_range_ < 1 || symbol_range_ > kMaxSymbolRange) throw InvalidArgument("symbol range out of bounds");
    if (entropy_model_.size() != static_cast<std::size_t>(d))
      throw InvalidArgument("entropy model needs one table per dimension");
    for (const auto& table : entropy_model_)
      if (table.size() != alphabet_size()) throw InvalidArgument("entropy table size must be 2R+1");
    zero_bin_edge_.resize(d);
    for (Eigen::Index i = 0; i < d; ++i) zero_bin_edge_[i] = companding_.inverse(0.5 * step_[i]);
  }

  // PCA transform of the samples, then a Laplace-smoothed histogram of the
  // quantized coefficients.
  static TransformCodec fit(std::span<const Vector> samples, const FitOptions& options) {
    if (samples.empty()) throw InvalidArgument("fit: no samples");
    const Eigen::Index d = samples.front().size();
    if (static_cast<Eigen::Index>(samples.size()) < d + 1) throw RankDeficient("fit: need at least d+1 samples");
    Vector mean = Vector::Zero(d);
    for (const auto& x : samples) {
      if (x.size() != d) throw LengthMismatch("fit: inconsistent sample dimension");
      mean += x;
    }
    mean /= static_cast<double>(samples.size());
    Matrix cov = Matrix::Zero(d, d);
    for (const auto& x : samples) cov.noalias() += (x - mean) * (x - mean).transpose();
    cov /= static_cast<double>(samples.size() - 1);

    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    if (eig.info() != Eigen::Success) throw RankDeficient("fit: eigendecomposition failed");
    const Vector& values = eig.eigenvalues();  // ascending
    if (!(values[0] > 1e-12 * std::max(1.0, values[d - 1]))) throw RankDeficient("fit: covariance is singular");

    Matrix transform(d, d);
    Vector stddev(d);
    for (Eigen::Index k = 0; k < d; ++k) {
      Vector v = eig.eigenvectors().col(d - 1 - k);
      for (Eigen::Index i = 0; i < d; ++i) {
        if (std::abs(v[i]) > 1e-12) {
          if (v[i] < 0) v = -v;
          break;
        }
      }
      transform.col(k) = v;
      stddev[k] = std::sqrt(values[d - 1 - k]);
    }

    Vector step = options.step;
    if (step.size() == 1 && d > 1) step = Vector::Constant(d, step[0]);
    if (step.size() != d) throw InvalidArgument("fit: step must have one entry per dimension");

    // Unclamped indices of the training data.
    std::vector<std::vector<long long>> raw(samples.size(), std::vector<long long>(d));
    long long observed = 0;
    for (std::size_t n = 0; n < samples.size(); ++n) {
      const Vector u = transform.transpose() * samples[n];
      for (Eigen::Index i = 0; i < d; ++i) {
        raw[n][i] = static_cast<long long>(std::nearbyint(options.companding.forward(u[i]) / step[i]));
        observed = std::max(observed, std::abs(raw[n][i]));
      }
    }

    int range = options.symbol_range;
    if (range == 0) {
      // Cover the data and an 8-sigma tail of every coefficient around the
      // sample mean, so clamping at fit time is negligible.
      long long bound = observed + 1;
      const Vector mu = transform.transpose() * mean;
      for (Eigen::Index i = 0; i < d; ++i) {
        const double reach = std::abs(mu[i]) + 8.0 * stddev[i];
        bound = std::max(bound, static_cast<long long>(std::ceil(options.companding.forward(reach) / step[i])) + 1);
      }
      range = static_cast<int>(std::min<long long>(bound, kMaxSymbolRange));
    }

    const std::size_t bins = 2 * static_cast<std::size_t>(range) + 1;
    std::vector<FrequencyTable> model;
    model.reserve(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      std::vector<double> counts(bins, 1.0);
      for (const auto& row : raw) {
        const long long s = std::clamp<long long>(row[i], -range, range);
        counts[static_cast<std::size_t>(s + range)] += 1.0;
      }
      model.push_back(FrequencyTable::from_weights(counts));
    }
    return TransformCodec(std::move(transform), std::move(step), options.companding, range, std::move(model));
  }

  Eigen::Index dim() const noexcept { return transform_.rows(); }
  const Matrix& transform() const noexcept { return transform_; }
  const Vector& step() const noexcept { return step_; }
  const Companding& companding() const noexcept { return companding_; }
  int symbol_range() const noexcept { return symbol_range_; }
  std::size_t alphabet_size() const noexcept { return 2 * static_cast<std::size_t>(symbol_range_) + 1; }
  const std::vector<FrequencyTable>& entropy_model() const noexcept { return entropy_model_; }
  const FrequencyTable& table(Eigen::Index i) const { return entropy_model_.at(static_cast<std::size_t>(i)); }

  std::size_t bin_of(std::int32_t index) const { return static_cast<std::size_t>(index + symbol_range_); }
  std::int32_t index_of(std::size_t bin) const { return static_cast<std::int32_t>(bin) - symbol_range_; }

  // clamp(round_half_even(compand(A^T x) / step), -R, R)
  Symbols encode(const Vector& x) const {
    check_input(x);
    const Vector u = transform_.transpose() * x;
    Symbols s;
    s.indices.resize(static_cast<std::size_t>(dim()));
    for (Eigen::Index i = 0; i < dim(); ++i) s.indices[i] = quantize(companding_.forward(u[i]) / step_[i]);
    return s;
  }

  // Lattice reconstruction. Without companding this is A (step * s). With
  // companding the power-law expansion is applied after the synthesis
  // transform, so it does not undo the analysis-side compression and the
  // codec stops being idempotent.
  Vector decode(const Symbols& s) const {
    check_symbols(s);
    Vector v(dim());
    for (Eigen::Index i = 0; i < dim(); ++i) v[i] = step_[i] * s.indices[i];
    Vector x = transform_ * v;
    if (companding_.enabled())
      for (Eigen::Index i = 0; i < dim(); ++i) x[i] = companding_.inverse(x[i]);
    return x;
  }

  // Straight-through contract: rounding and clamping pass gradients unchanged,
  // ds/dx = diag(1/step) diag(compand'(A^T x)) A^T. The companding derivative
  // is evaluated no closer to zero than the edge of the zero bin.
  SteEncoding encode_ste(const Vector& x) const {
    SteEncoding out{encode(x), Matrix(dim(), dim())};
    const Vector u = transform_.transpose() * x;
    for (Eigen::Index i = 0; i < dim(); ++i) {
      const double scale = companding_.derivative(u[i], zero_bin_edge_[i]) / step_[i];
      out.jacobian.row(i) = scale * transform_.col(i).transpose();
    }
    return out;
  }

  // d decode / d s, treating the symbols as continuous.
  Matrix decode_jacobian(const Symbols& s) const {
    check_symbols(s);
    Matrix jac = transform_ * step_.asDiagonal();
    if (companding_.enabled()) {
      Vector v(dim());
      for (Eigen::Index i = 0; i < dim(); ++i) v[i] = step_[i] * s.indices[i];
      const Vector z = transform_ * v;
      for (Eigen::Index i = 0; i < dim(); ++i) jac.row(i) *= companding_.inverse_derivative(z[i]);
    }
    return jac;
  }

  // Ideal code length of s under the entropy model, in bits.
  double information_bits(const Symbols& s) const {
    check_symbols(s);
    double bits = 0.0;
    for (Eigen::Index i = 0; i < dim(); ++i) bits += table(i).information_bits(bin_of(s.indices[i]));
    return bits;
  }

  bool in_range(const Symbols& s) const noexcept {
    if (s.size() != static_cast<std::size_t>(dim())) return false;
    return std::all_of(s.indices.begin(), s.indices.end(),
                       [&](std::int32_t v) { return v >= -symbol_range_ && v <= symbol_range_; });
  }

 private:
  std::int32_t quantize(double scaled) const {
    // nearbyint honours the default round-to-nearest-even mode.
    const double r = std::nearbyint(std::clamp(scaled, -2.0 * kMaxSymbolRange, 2.0 * kMaxSymbolRange));
    return static_cast<std::int32_t>(std::clamp(r, static_cast<double>(-symbol_range_), static_cast<double>(symbol_range_)));
  }

  void check_input(const Vector& x) const {
    if (x.size() != dim()) throw LengthMismatch("input dimension does not match codec");
    if (!x.allFinite()) throw NonFinite("encode: non-finite input");
  }

  void check_symbols(const Symbols& s) const {
    if (s.size() != static_cast<std::size_t>(dim())) throw LengthMismatch("symbol count does not match codec");
    if (!in_range(s)) throw OutOfRange("symbol index outside [-R, R]");
  }

  Matrix transform_;
  Vector step_;
  Companding companding_;
  int symbol_range_;
  std::vector<FrequencyTable> entropy_model_;
  Vector zero_bin_edge_;
};

}  // namespace idemlab
