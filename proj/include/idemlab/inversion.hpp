#pragma once

// Guided inversion of the unconditional model under the idempotence
// constraint f0(x) = y, measured on symbols (y domain) or on decoded
// reconstructions (x domain).

#include "idemlab/diffusion.hpp"
#include "idemlab/errors.hpp"
#include "idemlab/random.hpp"
#include "idemlab/transform_codec.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace idemlab {

enum class ConstraintDomain { y, x };

struct AdaptivePolicy {
  double threshold = 0.0;  // retry while recompression_mse > threshold
  double factor = 1.5;
  int max_retries = 4;
};

struct InversionConfig {
  double zeta = 0.0;
  ConstraintDomain domain = ConstraintDomain::y;
  bool normalize_gradient = false;  // scale by 1 / (2 sqrt(loss)), i.e. descend on sqrt(loss)
  std::optional<AdaptivePolicy> adaptive;

  void validate() const {
    if (!(zeta >= 0.0) || !std::isfinite(zeta)) throw InvalidArgument("InversionConfig: zeta must be >= 0");
    if (adaptive) {
      if (!(adaptive->factor > 1.0)) throw InvalidArgument("InversionConfig: adaptive factor must be > 1");
      if (adaptive->max_retries < 0) throw InvalidArgument("InversionConfig: max_retries must be >= 0");
      if (!(adaptive->threshold >= 0.0)) throw InvalidArgument("InversionConfig: threshold must be >= 0");
    }
  }
};

struct InversionResult {
  Vector x_hat;
  double final_zeta = 0.0;
  int attempts = 1;
  double y_residual = 0.0;         // ||f0(x_hat) - y||^2 in symbol units
  double recompression_mse = 0.0;  // ||g0(f0(x_hat)) - g0(y)||^2

  bool satisfied() const noexcept { return y_residual == 0.0; }
};

struct Guidance {
  Vector gradient;
  double loss = 0.0;
  Vector score;  // score at x_t, reused by the ancestral step
};

// Gradient of L(tweedie(x_t)) with respect to x_t, L being the squared
// symbol residual (y domain) or the squared decoded residual (x domain).
inline Guidance guidance(const DiffusionModel& model, const TransformCodec& codec, const Vector& x_t, int t,
                         const Symbols& y, ConstraintDomain domain) {
  if (t < 1 || t > model.steps()) throw OutOfRange("guidance: t outside [1, T]");
  auto tw = model.tweedie_with_jacobian(x_t, t);
  if (!tw.x0.allFinite()) throw NonFinite("guidance: non-finite posterior mean");
  const SteEncoding ste = codec.encode_ste(tw.x0);
  Vector grad_s(codec.dim());
  double loss = 0.0;
  if (domain == ConstraintDomain::y) {
    for (Eigen::Index i = 0; i < codec.dim(); ++i)
      grad_s[i] = static_cast<double>(ste.symbols.indices[i]) - y.indices[i];
    loss = grad_s.squaredNorm();
    grad_s *= 2.0;
  } else {
    const Vector r = codec.decode(ste.symbols) - codec.decode(y);
    loss = r.squaredNorm();
    grad_s = codec.decode_jacobian(ste.symbols).transpose() * (2.0 * r);
  }
  return {tw.jacobian.transpose() * (ste.jacobian.transpose() * grad_s), loss, std::move(tw.score)};
}

inline Vector guidance_gradient(const DiffusionModel& model, const TransformCodec& codec, const Vector& x_t, int t,
                                const Symbols& y, ConstraintDomain domain) {
  return guidance(model, codec, x_t, t, y, domain).gradient;
}

inline void fill_residuals(const TransformCodec& codec, const Symbols& y, InversionResult& r) {
  const Symbols s = codec.encode(r.x_hat);
  r.y_residual = squared_distance(s, y);
  r.recompression_mse = (codec.decode(s) - codec.decode(y)).squaredNorm();
}

// T ancestral steps, each followed by x -= zeta * guidance evaluated at the
// pre-step state. Guidance draws nothing from rng, so zeta = 0 reproduces
// sample_chain under the same stream.
inline InversionResult dps_invert(const DiffusionModel& model, const TransformCodec& codec, const Symbols& y,
                                  const InversionConfig& config, Rng& rng) {
  config.validate();
  if (!codec.in_range(y)) throw OutOfRange("dps_invert: symbols out of range");
  if (codec.dim() != model.dim()) throw LengthMismatch("dps_invert: codec and model dimensions differ");
  const auto& schedule = model.schedule();
  Vector x = standard_normal(model.dim(), rng);
  for (int t = model.steps(); t >= 1; --t) {
    std::optional<Guidance> g;
    if (config.zeta != 0.0) g = guidance(model, codec, x, t, y, config.domain);
    Vector next = model.reverse_mean(x, g ? g->score : model.score(x, t), t);
    if (t > 1) next += std::sqrt(schedule.posterior_variance(t)) * standard_normal(model.dim(), rng);
    if (g) {
      double scale = config.zeta;
      if (config.normalize_gradient) scale = g->loss > 0.0 ? scale / (2.0 * std::sqrt(g->loss)) : 0.0;
      next -= scale * g->gradient;
    }
    x = std::move(next);
    if (!x.allFinite()) throw NonFinite("dps_invert: chain diverged at t = " + std::to_string(t));
  }
  InversionResult r;
  r.x_hat = std::move(x);
  r.final_zeta = config.zeta;
  fill_residuals(codec, y, r);
  return r;
}

// Retries with zeta multiplied by the policy factor while the decoded
// residual exceeds the threshold, continuing the same rng stream. Returns
// the last attempt.
inline InversionResult adaptive_zeta_invert(const DiffusionModel& model, const TransformCodec& codec,
                                            const Symbols& y, const InversionConfig& config, Rng& rng) {
  config.validate();
  if (!config.adaptive) throw InvalidArgument("adaptive_zeta_invert: no adaptive policy");
  const AdaptivePolicy& policy = *config.adaptive;
  InversionConfig attempt = config;
  InversionResult r;
  for (int k = 0;; ++k) {
    r = dps_invert(model, codec, y, attempt, rng);
    r.attempts = k + 1;
    if (r.recompression_mse <= policy.threshold || k == policy.max_retries) break;
    attempt.zeta *= policy.factor;
  }
  return r;
}

inline InversionResult invert(const DiffusionModel& model, const TransformCodec& codec, const Symbols& y,
                              const InversionConfig& config, Rng& rng) {
  return config.adaptive ? adaptive_zeta_invert(model, codec, y, config, rng)
                         : dps_invert(model, codec, y, config, rng);
}

// alpha * x_p + (1 - alpha) * x_delta
inline Vector convex_interpolate(const Vector& x_p, const Vector& x_delta, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw OutOfRange("convex_interpolate: alpha outside [0, 1]");
  if (x_p.size() != x_delta.size()) throw LengthMismatch("convex_interpolate: dimensions differ");
  return alpha * x_p + (1.0 - alpha) * x_delta;
}

struct AugmentationReport {
  double base = 0.0;       // mean ||x1 - g0(f0(x1))||^2, x1 = g0(f0(x))
  double augmented = 0.0;  // mean ||x1 - g0(f0(x1_p))||^2, x1_p inverted from f0(x)
  std::size_t samples = 0;
  std::size_t satisfied = 0;  // inversions with f0(x1_p) = f0(x)
  bool inverter_used = false;
};

// Inverter: (symbols, sample index) -> reconstruction.
using Inverter = std::function<Vector(const Symbols&, std::size_t)>;

// Re-compression drift of the base decoder versus the inversion decoder on
// the same bitstreams. A codec without companding is a lattice fixed point;
// the inversion module is then not needed and both terms are exactly zero.
inline AugmentationReport augmented_recompression(const TransformCodec& codec, const Inverter& inverter,
                                                  std::span<const Vector> samples) {
  if (samples.empty()) throw InvalidArgument("augmented_recompression: empty sample set");
  AugmentationReport rep;
  rep.samples = samples.size();
  rep.inverter_used = codec.companding().enabled();
  if (!rep.inverter_used) {
    rep.satisfied = samples.size();
    return rep;
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Symbols y = codec.encode(samples[i]);
    const Vector x1 = codec.decode(y);
    rep.base += (x1 - codec.decode(codec.encode(x1))).squaredNorm();
    const Vector xp = inverter(y, i);
    const Symbols yp = codec.encode(xp);
    if (yp == y) ++rep.satisfied;
    rep.augmented += (x1 - codec.decode(yp)).squaredNorm();
  }
  rep.base /= static_cast<double>(samples.size());
  rep.augmented /= static_cast<double>(samples.size());
  return rep;
}

}  // namespace idemlab
