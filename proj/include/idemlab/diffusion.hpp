#pragma once

// Unconditional generative model with exact scores: a Gaussian mixture
// source, its closed-form noised marginals under a DDPM schedule, the
// Tweedie posterior mean and the ancestral sampler.

#include "idemlab/errors.hpp"
#include "idemlab/random.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

namespace idemlab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class GmmSource {
 public:
  GmmSource(std::vector<double> weights, std::vector<Vector> means, std::vector<Matrix> covariances)
      : weights_(std::move(weights)), means_(std::move(means)), covariances_(std::move(covariances)) {
    if (weights_.empty()) throw InvalidArgument("GmmSource: no components");
    if (means_.size() != weights_.size() || covariances_.size() != weights_.size())
      throw InvalidArgument("GmmSource: component arrays differ in length");
    const Eigen::Index d = means_.front().size();
    if (d == 0) throw InvalidArgument("GmmSource: zero dimension");
    double total = 0.0;
    for (double w : weights_) {
      if (!(w > 0.0)) throw InvalidArgument("GmmSource: weights must be positive");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) throw InvalidArgument("GmmSource: weights must sum to 1");
    chol_.reserve(weights_.size());
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      if (means_[i].size() != d || covariances_[i].rows() != d || covariances_[i].cols() != d)
        throw InvalidArgument("GmmSource: inconsistent dimensions");
      if (!means_[i].allFinite()) throw InvalidArgument("GmmSource: non-finite mean");
      if (!(covariances_[i] - covariances_[i].transpose()).isZero(1e-12))
        throw InvalidArgument("GmmSource: covariance not symmetric");
      Eigen::LLT<Matrix> llt(covariances_[i]);
      if (llt.info() != Eigen::Success) throw InvalidArgument("GmmSource: covariance not positive definite");
      chol_.push_back(llt.matrixL());
    }
  }

  static GmmSource standard_normal(Eigen::Index d) {
    return {{1.0}, {Vector::Zero(d)}, {Matrix::Identity(d, d)}};
  }

  Eigen::Index dim() const noexcept { return means_.front().size(); }
  std::size_t components() const noexcept { return weights_.size(); }
  const std::vector<double>& weights() const noexcept { return weights_; }
  const std::vector<Vector>& means() const noexcept { return means_; }
  const std::vector<Matrix>& covariances() const noexcept { return covariances_; }

  Vector mean() const {
    Vector m = Vector::Zero(dim());
    for (std::size_t i = 0; i < components(); ++i) m += weights_[i] * means_[i];
    return m;
  }

  Matrix covariance() const {
    const Vector m = mean();
    Matrix c = Matrix::Zero(dim(), dim());
    for (std::size_t i = 0; i < components(); ++i)
      c += weights_[i] * (covariances_[i] + (means_[i] - m) * (means_[i] - m).transpose());
    return c;
  }

  Vector sample(Rng& rng) const {
    std::discrete_distribution<std::size_t> pick(weights_.begin(), weights_.end());
    const std::size_t k = pick(rng);
    return means_[k] + chol_[k] * idemlab::standard_normal(dim(), rng);
  }

  std::vector<Vector> sample(std::size_t n, Rng& rng) const {
    std::vector<Vector> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(sample(rng));
    return out;
  }

 private:
  std::vector<double> weights_;
  std::vector<Vector> means_;
  std::vector<Matrix> covariances_;
  std::vector<Matrix> chol_;
};

// beta_t for t = 1..T; alpha_bar(0) = 1.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
    if (betas_.empty()) throw InvalidArgument("NoiseSchedule: no steps");
    alpha_bar_.assign(betas_.size() + 1, 1.0);
    for (std::size_t t = 1; t <= betas_.size(); ++t) {
      const double b = betas_[t - 1];
      if (!(b > 0.0 && b < 1.0)) throw InvalidArgument("NoiseSchedule: beta must lie in (0, 1)");
      if (t > 1 && b < betas_[t - 2]) throw InvalidArgument("NoiseSchedule: beta must be non-decreasing");
      alpha_bar_[t] = alpha_bar_[t - 1] * (1.0 - b);
    }
    if (!(alpha_bar_.back() < 1e-3)) throw InvalidArgument("NoiseSchedule: alpha_bar_T must be < 1e-3");
  }

  static NoiseSchedule linear(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw InvalidArgument("NoiseSchedule: steps must be >= 1");
    std::vector<double> betas(static_cast<std::size_t>(steps));
    for (int t = 0; t < steps; ++t)
      betas[t] = steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (steps - 1);
    return NoiseSchedule(std::move(betas));
  }

  // 200 steps, beta linear from 1e-4 to 0.07 (alpha_bar_T ~ 7.6e-4).
  static NoiseSchedule desk_default() { return linear(200, 1e-4, 0.07); }

  int steps() const noexcept { return static_cast<int>(betas_.size()); }
  double beta(int t) const { return betas_.at(static_cast<std::size_t>(t - 1)); }
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const { return alpha_bar_.at(static_cast<std::size_t>(t)); }

  // Variance of the reverse transition, beta_t (1 - abar_{t-1}) / (1 - abar_t).
  double posterior_variance(int t) const {
    return beta(t) * (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t));
  }

 private:
  std::vector<double> betas_;
  std::vector<double> alpha_bar_;
};

// Means sqrt(abar) mu_i, covariances abar Sigma_i + (1 - abar) I.
inline GmmSource marginal_at(const GmmSource& source, const NoiseSchedule& schedule, int t) {
  if (t < 0 || t > schedule.steps()) throw OutOfRange("marginal_at: t outside [0, T]");
  const double ab = schedule.alpha_bar(t);
  if (t == 0) return source;
  std::vector<Vector> means;
  std::vector<Matrix> covs;
  const Matrix eye = Matrix::Identity(source.dim(), source.dim());
  for (std::size_t i = 0; i < source.components(); ++i) {
    means.push_back(std::sqrt(ab) * source.means()[i]);
    covs.push_back(ab * source.covariances()[i] + (1.0 - ab) * eye);
  }
  return {source.weights(), std::move(means), std::move(covs)};
}

// Log density, gradient and Hessian of a Gaussian mixture; responsibilities
// are computed in log space.
class MixtureDensity {
 public:
  explicit MixtureDensity(const GmmSource& g) : means_(g.means()) {
    const double d = static_cast<double>(g.dim());
    for (std::size_t i = 0; i < g.components(); ++i) {
      Eigen::LLT<Matrix> llt(g.covariances()[i]);
      if (llt.info() != Eigen::Success) throw InvalidArgument("MixtureDensity: covariance not SPD");
      precisions_.push_back(llt.solve(Matrix::Identity(g.dim(), g.dim())));
      const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
      log_norm_.push_back(std::log(g.weights()[i]) - 0.5 * logdet - 0.5 * d * std::log(2.0 * std::numbers::pi));
    }
  }

  struct Evaluation {
    double log_density;
    Vector score;
    Matrix hessian;  // filled only when requested
  };

  Evaluation evaluate(const Vector& x, bool with_hessian) const {
    const std::size_t k = means_.size();
    std::vector<Vector> grads(k);
    std::vector<double> logp(k);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i) {
      const Vector diff = x - means_[i];
      grads[i] = -(precisions_[i] * diff);
      logp[i] = log_norm_[i] + 0.5 * diff.dot(grads[i]);
      top = std::max(top, logp[i]);
    }
    double total = 0.0;
    std::vector<double> resp(k);
    for (std::size_t i = 0; i < k; ++i) total += (resp[i] = std::exp(logp[i] - top));
    for (double& r : resp) r /= total;

    Evaluation out{top + std::log(total), Vector::Zero(x.size()), Matrix()};
    for (std::size_t i = 0; i < k; ++i) out.score += resp[i] * grads[i];
    if (with_hessian) {
      out.hessian = -out.score * out.score.transpose();
      for (std::size_t i = 0; i < k; ++i)
        out.hessian += resp[i] * (grads[i] * grads[i].transpose() - precisions_[i]);
    }
    return out;
  }

  double log_density(const Vector& x) const { return evaluate(x, false).log_density; }
  Vector score(const Vector& x) const { return evaluate(x, false).score; }

 private:
  std::vector<Vector> means_;
  std::vector<Matrix> precisions_;
  std::vector<double> log_norm_;
};

// Bounded smooth field added to the exact score to emulate model mismatch:
// e(x) = amplitude / sqrt(K) * sum_k c_k sin(w_k . x + b_k).
class ScorePerturbation {
 public:
  ScorePerturbation(Eigen::Index dim, double amplitude, std::uint64_t seed, int features = 16)
      : amplitude_(amplitude), w_(features, dim), b_(features), c_(features, dim) {
    Rng rng = derive_stream(seed, 0, 0x5C0E);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    for (int k = 0; k < features; ++k) {
      for (Eigen::Index j = 0; j < dim; ++j) w_(k, j) = normal(rng);
      b_[k] = phase(rng);
      for (Eigen::Index j = 0; j < dim; ++j) c_(k, j) = normal(rng);
    }
    scale_ = amplitude_ / std::sqrt(static_cast<double>(features));
  }

  Vector value(const Vector& x) const {
    const Eigen::ArrayXd arg = (w_ * x + b_).array();
    return scale_ * (c_.transpose() * arg.sin().matrix());
  }

  Matrix jacobian(const Vector& x) const {
    const Eigen::ArrayXd arg = (w_ * x + b_).array();
    return scale_ * (c_.transpose() * arg.cos().matrix().asDiagonal() * w_);
  }

  double amplitude() const noexcept { return amplitude_; }

 private:
  double amplitude_;
  double scale_ = 0.0;
  Matrix w_;
  Vector b_;
  Matrix c_;
};

// Source + schedule with the noised marginal of every step precomputed.
class DiffusionModel {
 public:
  DiffusionModel(GmmSource source, NoiseSchedule schedule,
                 std::optional<ScorePerturbation> perturbation = std::nullopt)
      : source_(std::move(source)), schedule_(std::move(schedule)), perturbation_(std::move(perturbation)) {
    densities_.reserve(static_cast<std::size_t>(schedule_.steps()) + 1);
    for (int t = 0; t <= schedule_.steps(); ++t) densities_.emplace_back(marginal_at(source_, schedule_, t));
  }

  const GmmSource& source() const noexcept { return source_; }
  const NoiseSchedule& schedule() const noexcept { return schedule_; }
  Eigen::Index dim() const noexcept { return source_.dim(); }
  int steps() const noexcept { return schedule_.steps(); }

  const MixtureDensity& density(int t) const {
    if (t < 0 || t > steps()) throw OutOfRange("density: t outside [0, T]");
    return densities_[static_cast<std::size_t>(t)];
  }

  Vector score(const Vector& x, int t) const {
    Vector s = density(t).score(x);
    if (perturbation_) s += perturbation_->value(x);
    return s;
  }

  // Score and its Jacobian (the Hessian of log p_t when unperturbed).
  std::pair<Vector, Matrix> score_and_jacobian(const Vector& x, int t) const {
    auto eval = density(t).evaluate(x, true);
    if (perturbation_) {
      eval.score += perturbation_->value(x);
      eval.hessian += perturbation_->jacobian(x);
    }
    return {std::move(eval.score), std::move(eval.hessian)};
  }

  // E[X_0 | X_t = x] = (x + (1 - abar_t) score(x, t)) / sqrt(abar_t).
  Vector tweedie(const Vector& x, int t) const {
    const double ab = schedule_.alpha_bar(t);
    return (x + (1.0 - ab) * score(x, t)) / std::sqrt(ab);
  }

  struct TweedieEvaluation {
    Vector x0;
    Matrix jacobian;  // d x0 / d x_t
    Vector score;
  };

  TweedieEvaluation tweedie_with_jacobian(const Vector& x, int t) const {
    const double ab = schedule_.alpha_bar(t);
    const double inv = 1.0 / std::sqrt(ab);
    auto [s, h] = score_and_jacobian(x, t);
    TweedieEvaluation out;
    out.x0 = inv * (x + (1.0 - ab) * s);
    out.jacobian = inv * (Matrix::Identity(dim(), dim()) + (1.0 - ab) * h);
    out.score = std::move(s);
    return out;
  }

  // Ancestral mean (x + beta_t score) / sqrt(alpha_t), using a precomputed score.
  Vector reverse_mean(const Vector& x, const Vector& score_at_x, int t) const {
    return (x + schedule_.beta(t) * score_at_x) / std::sqrt(schedule_.alpha(t));
  }

 private:
  GmmSource source_;
  NoiseSchedule schedule_;
  std::optional<ScorePerturbation> perturbation_;
  std::vector<MixtureDensity> densities_;
};

inline Vector score(const DiffusionModel& model, const Vector& x, int t) { return model.score(x, t); }

inline Vector tweedie_x0(const DiffusionModel& model, const Vector& x_t, int t) {
  if (t < 1 || t > model.steps()) throw OutOfRange("tweedie_x0: t outside [1, T]");
  return model.tweedie(x_t, t);
}

// One reverse step x_t -> x_{t-1}; the final step (t = 1) adds no noise and
// draws nothing from rng.
inline Vector ddpm_step(const DiffusionModel& model, const Vector& x_t, int t, Rng& rng) {
  if (t < 1 || t > model.steps()) throw OutOfRange("ddpm_step: t outside [1, T]");
  Vector next = model.reverse_mean(x_t, model.score(x_t, t), t);
  if (t > 1) next += std::sqrt(model.schedule().posterior_variance(t)) * standard_normal(model.dim(), rng);
  return next;
}

inline Vector sample_chain(const DiffusionModel& model, Rng& rng) {
  Vector x = standard_normal(model.dim(), rng);
  for (int t = model.steps(); t >= 1; --t) x = ddpm_step(model, x, t, rng);
  return x;
}

inline std::vector<Vector> sample_unconditional(const DiffusionModel& model, std::size_t n, Rng& rng) {
  std::vector<Vector> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_chain(model, rng));
  return out;
}

}  // namespace idemlab
