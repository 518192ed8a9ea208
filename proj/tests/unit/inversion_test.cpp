#include "idemlab/cell_mean.hpp"
#include "idemlab/inversion.hpp"
#include "idemlab/metrics.hpp"
#include "idemlab/presets.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>

using namespace idemlab;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

TransformCodec fit_codec(const GmmSource& src, double step, double gamma = 1.0, int range = 0,
                         std::uint64_t seed = 11) {
  Rng rng = derive_stream(seed, 0);
  const auto train = src.sample(5000, rng);
  return TransformCodec::fit(train, {Vector::Constant(1, step), Companding(gamma), range});
}

struct Bench {
  DiffusionModel model{presets::benchmark_source(), NoiseSchedule::desk_default()};
  TransformCodec codec;
  explicit Bench(double step, double gamma = 1.0) : codec(fit_codec(presets::benchmark_source(), step, gamma)) {}
};

InversionConfig with_zeta(double zeta, ConstraintDomain domain = ConstraintDomain::y) {
  InversionConfig c;
  c.zeta = zeta;
  c.domain = domain;
  return c;
}

InversionConfig adaptive(double zeta, AdaptivePolicy policy) {
  InversionConfig c = with_zeta(zeta);
  c.adaptive = policy;
  return c;
}

Symbols target_symbols(const Bench& b, std::uint64_t seed) {
  Rng rng = derive_stream(seed, 0, 7);
  return b.codec.encode(b.model.source().sample(rng));
}

TEST(Inversion, ZeroZetaReproducesUnconditionalChain) {
  const Bench b(1.5);
  const Symbols y = target_symbols(b, 1);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng a = derive_stream(seed, 0), c = derive_stream(seed, 0);
    const InversionResult r = dps_invert(b.model, b.codec, y, {}, a);
    const Vector x = sample_chain(b.model, c);
    EXPECT_EQ(r.x_hat, x);
    EXPECT_EQ(a(), c());  // same number of draws
  }
}

TEST(Guidance, VanishesWhenPosteriorMeanEncodesToTarget) {
  const Bench b(1.0);
  Rng rng = derive_stream(2, 0);
  for (int t : {1, 20, 150}) {
    const Vector x = standard_normal(2, rng);
    const Symbols y = b.codec.encode(b.model.tweedie(x, t));
    for (auto domain : {ConstraintDomain::y, ConstraintDomain::x}) {
      const Guidance g = guidance(b.model, b.codec, x, t, y, domain);
      EXPECT_EQ(g.loss, 0.0);
      EXPECT_EQ(g.gradient.norm(), 0.0);
    }
  }
}

// The straight-through gradient is the exact gradient of the surrogate in
// which the rounding offset at the evaluation point is frozen.
TEST(Guidance, MatchesFrozenRoundingSurrogate) {
  const Bench b(0.8);
  Rng rng = derive_stream(3, 0);
  const Matrix& a = b.codec.transform();
  for (int trial = 0; trial < 30; ++trial) {
    const int t = 1 + static_cast<int>(rng() % 180);
    const Vector x = standard_normal(2, rng);
    const Symbols y = target_symbols(b, 100 + trial);
    const Vector u0 = a.transpose() * b.model.tweedie(x, t) / 0.8;
    const Symbols s0 = b.codec.encode(b.model.tweedie(x, t));
    Vector offset(2), target(2);
    for (int i = 0; i < 2; ++i) {
      offset[i] = s0.indices[i] - u0[i];
      target[i] = y.indices[i];
    }
    auto surrogate = [&](const Vector& z) {
      return (a.transpose() * b.model.tweedie(z, t) / 0.8 + offset - target).squaredNorm();
    };
    const Vector g = guidance_gradient(b.model, b.codec, x, t, y, ConstraintDomain::y);
    for (int j = 0; j < 2; ++j) {
      Vector e = Vector::Zero(2);
      e[j] = 1e-6;
      const double fd = (surrogate(x + e) - surrogate(x - e)) / 2e-6;
      EXPECT_NEAR(g[j], fd, 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(Guidance, DomainsDifferByStepSquared) {
  for (double step : {0.5, 1.5, 2.5}) {
    const Bench b(step);
    Rng rng = derive_stream(4, static_cast<std::uint64_t>(step * 10));
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
      const int t = 1 + static_cast<int>(rng() % 200);
      const Vector x = 2.0 * standard_normal(2, rng);
      const Symbols y = target_symbols(b, 1000 + trial);
      const Vector gy = guidance_gradient(b.model, b.codec, x, t, y, ConstraintDomain::y);
      const Vector gx = guidance_gradient(b.model, b.codec, x, t, y, ConstraintDomain::x);
      const Vector expect = step * step * gy;
      if (expect.norm() == 0.0) {
        EXPECT_EQ(gx.norm(), 0.0);
        continue;
      }
      worst = std::max(worst, (gx - expect).norm() / expect.norm());
    }
    EXPECT_LT(worst, 1e-9) << "step " << step;
  }
}

TEST(Inversion, XDomainWithRescaledZetaTracksYDomain) {
  const double step = 1.5;
  const Bench b(step);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Symbols y = target_symbols(b, 50 + seed);
    Rng ry = derive_stream(seed, 1), rx = derive_stream(seed, 1);
    const auto a = dps_invert(b.model, b.codec, y, with_zeta(0.1), ry);
    const auto c = dps_invert(b.model, b.codec, y, with_zeta(0.1 / (step * step), ConstraintDomain::x), rx);
    EXPECT_LT((a.x_hat - c.x_hat).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_EQ(b.codec.encode(a.x_hat), b.codec.encode(c.x_hat));
  }
}

TEST(Inversion, GuidanceRaisesConstraintSatisfaction) {
  const Bench b(1.5);
  int unguided = 0, guided = 0;
  for (std::uint64_t i = 0; i < 60; ++i) {
    const Symbols y = target_symbols(b, 200 + i);
    Rng r0 = derive_stream(i, 2), r1 = derive_stream(i, 2);
    unguided += dps_invert(b.model, b.codec, y, {}, r0).satisfied();
    guided += dps_invert(b.model, b.codec, y, with_zeta(0.1), r1).satisfied();
  }
  EXPECT_GE(guided, 57);
  EXPECT_LT(unguided, guided);
}

TEST(Inversion, ResidualsAreConsistent) {
  const Bench b(1.5);
  const Symbols y = target_symbols(b, 9);
  Rng rng = derive_stream(9, 0);
  const auto r = dps_invert(b.model, b.codec, y, with_zeta(0.02), rng);
  const Symbols s = b.codec.encode(r.x_hat);
  EXPECT_EQ(r.y_residual, squared_distance(s, y));
  EXPECT_DOUBLE_EQ(r.recompression_mse, 2.25 * r.y_residual);
  EXPECT_EQ(r.satisfied(), s == y);
}

TEST(Inversion, RejectsBadInputs) {
  const Bench b(1.5);
  Rng rng = derive_stream(1, 0);
  Symbols y = target_symbols(b, 1);
  EXPECT_THROW(dps_invert(b.model, b.codec, y, with_zeta(-0.1), rng), InvalidArgument);
  EXPECT_THROW(dps_invert(b.model, b.codec, y, with_zeta(std::nan("")), rng), InvalidArgument);
  y.indices[0] = b.codec.symbol_range() + 1;
  EXPECT_THROW(dps_invert(b.model, b.codec, y, with_zeta(0.1), rng), OutOfRange);
  EXPECT_THROW(guidance(b.model, b.codec, vec({0, 0}), 0, target_symbols(b, 1), ConstraintDomain::y), OutOfRange);
  const InversionConfig bad = adaptive(0.1, {.threshold = 0.0, .factor = 1.0, .max_retries = 1});
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(Inversion, DivergentStepSizeIsReported) {
  const Bench b(0.5);
  Symbols y = target_symbols(b, 1);
  y.indices[0] = b.codec.symbol_range();
  Rng rng = derive_stream(1, 0);
  EXPECT_THROW(dps_invert(b.model, b.codec, y, with_zeta(1e300), rng), NonFinite);
}

TEST(Adaptive, AcceptsFirstAttemptUnderLooseThreshold) {
  const Bench b(1.5);
  const Symbols y = target_symbols(b, 3);
  Rng a = derive_stream(3, 0), c = derive_stream(3, 0);
  const InversionConfig cfg = adaptive(0.05, {.threshold = 1e9, .factor = 1.5, .max_retries = 4});
  const auto r = invert(b.model, b.codec, y, cfg, a);
  EXPECT_EQ(r.attempts, 1);
  EXPECT_EQ(r.final_zeta, 0.05);
  EXPECT_EQ(r.x_hat, dps_invert(b.model, b.codec, y, with_zeta(0.05), c).x_hat);
}

TEST(Adaptive, StopsAtRetryBudget) {
  const Bench b(0.1);
  Symbols y = target_symbols(b, 4);
  y.indices[0] = b.codec.symbol_range();  // far outside the source support
  Rng rng = derive_stream(4, 0);
  const InversionConfig cfg = adaptive(1e-9, {.threshold = 0.0, .factor = 1.5, .max_retries = 2});
  const auto r = adaptive_zeta_invert(b.model, b.codec, y, cfg, rng);
  EXPECT_EQ(r.attempts, 3);
  EXPECT_DOUBLE_EQ(r.final_zeta, 1e-9 * 2.25);
  EXPECT_GT(r.recompression_mse, 0.0);
}

TEST(Adaptive, ContinuesStreamAndAcceptsBelowThreshold) {
  const Bench b(1.5);
  for (std::uint64_t i = 0; i < 20; ++i) {
    const Symbols y = target_symbols(b, 300 + i);
    const AdaptivePolicy policy{.threshold = 0.0, .factor = 2.0, .max_retries = 4};
    Rng rng = derive_stream(i, 5), manual = derive_stream(i, 5);
    const auto r = adaptive_zeta_invert(b.model, b.codec, y, adaptive(0.005, policy), manual);
    InversionResult first, last;
    double zeta = 0.005;
    for (int k = 0; k < r.attempts; ++k, zeta *= 2.0) {
      last = dps_invert(b.model, b.codec, y, with_zeta(zeta), rng);
      if (k == 0) first = last;
    }
    EXPECT_EQ(last.x_hat, r.x_hat);
    EXPECT_DOUBLE_EQ(r.final_zeta, 0.005 * std::pow(2.0, r.attempts - 1));
    if (r.recompression_mse <= policy.threshold) EXPECT_LE(r.recompression_mse, first.recompression_mse);
    else EXPECT_EQ(r.attempts, policy.max_retries + 1);
  }
}

TEST(ConvexInterpolate, EndpointsAndValidation) {
  const Vector p = vec({1.0, -2.0}), d = vec({0.5, 3.0});
  EXPECT_EQ(convex_interpolate(p, d, 1.0), p);
  EXPECT_EQ(convex_interpolate(p, d, 0.0), d);
  EXPECT_EQ(convex_interpolate(p, d, 0.5), vec({0.75, 0.5}));
  EXPECT_THROW(convex_interpolate(p, d, -0.01), OutOfRange);
  EXPECT_THROW(convex_interpolate(p, d, 1.01), OutOfRange);
  EXPECT_THROW(convex_interpolate(p, d, std::nan("")), OutOfRange);
  EXPECT_THROW(convex_interpolate(p, vec({1.0}), 0.5), LengthMismatch);
}

// Squared error is convex, so the blend never does worse than the chord.
TEST(ConvexInterpolate, ErrorBelowChord) {
  Rng rng = derive_stream(6, 0);
  for (int trial = 0; trial < 500; ++trial) {
    const Vector x = standard_normal(3, rng), p = standard_normal(3, rng), d = standard_normal(3, rng);
    const double alpha = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const double lhs = (x - convex_interpolate(p, d, alpha)).squaredNorm();
    const double rhs = alpha * (x - p).squaredNorm() + (1 - alpha) * (x - d).squaredNorm();
    EXPECT_LE(lhs, rhs + 1e-12);
  }
}

TEST(Augmentation, LatticeCodecNeedsNoInverter) {
  const auto src = presets::benchmark_source();
  const TransformCodec codec = fit_codec(src, 0.5);
  Rng rng = derive_stream(7, 0);
  const auto xs = src.sample(50, rng);
  int calls = 0;
  const auto rep = augmented_recompression(codec, [&](const Symbols&, std::size_t) {
    ++calls;
    return Vector::Zero(2).eval();
  }, xs);
  EXPECT_EQ(calls, 0);
  EXPECT_FALSE(rep.inverter_used);
  EXPECT_EQ(rep.base, 0.0);
  EXPECT_EQ(rep.augmented, 0.0);
  EXPECT_EQ(recompression_mse(codec, std::vector<Vector>{codec.decode(codec.encode(xs[0]))}), 0.0);
}

TEST(Augmentation, ExactPreimagesRemoveDrift) {
  const auto src = presets::benchmark_source();
  const TransformCodec codec = fit_codec(src, 0.4, 1.0 / 3.0);
  Rng rng = derive_stream(8, 0);
  const auto xs = src.sample(200, rng);
  const auto rep = augmented_recompression(codec, [&](const Symbols&, std::size_t i) { return xs[i]; }, xs);
  EXPECT_TRUE(rep.inverter_used);
  EXPECT_EQ(rep.satisfied, xs.size());
  EXPECT_EQ(rep.augmented, 0.0);
  EXPECT_GT(rep.base, 0.0);
}

// 1-D standard normal: the cell mean is the truncated-normal mean.
double truncated_mean(double lo, double hi) {
  auto phi = [](double z) { return std::isinf(z) ? 0.0 : std::exp(-0.5 * z * z) / std::sqrt(2 * M_PI); };
  // Upper-tail form for positive cells avoids cancellation near 1.
  const double mass = lo >= 0 ? 0.5 * (std::erfc(lo / std::sqrt(2.0)) - std::erfc(hi / std::sqrt(2.0)))
                              : 0.5 * (std::erfc(-hi / std::sqrt(2.0)) - std::erfc(-lo / std::sqrt(2.0)));
  return (phi(lo) - phi(hi)) / mass;
}

TEST(CellMean, MatchesTruncatedNormal) {
  const GmmSource src = GmmSource::standard_normal(1);
  for (double gamma : {1.0, 0.5}) {
    const TransformCodec codec = fit_codec(src, 0.7, gamma);
    const CellMeanDecoder dec(src, codec);
    const double sign = codec.transform()(0, 0);
    for (int k : {-3, -1, 0, 1, 2, 4}) {
      const Companding& c = codec.companding();
      const double lo = c.inverse(0.7 * (k - 0.5));
      const double hi = c.inverse(0.7 * (k + 0.5));
      EXPECT_NEAR(dec.decode({{k}})[0], sign * truncated_mean(lo, hi), 1e-9) << "gamma " << gamma << " k " << k;
    }
  }
}

TEST(CellMean, MatchesMonteCarloOnBenchmark) {
  const auto src = presets::benchmark_source();
  const TransformCodec codec = fit_codec(src, 1.0);
  const CellMeanDecoder dec(src, codec);
  Rng rng = derive_stream(9, 0);
  const auto xs = src.sample(400'000, rng);
  std::map<std::vector<std::int32_t>, std::pair<Vector, std::size_t>> cells;
  for (const auto& x : xs) {
    auto& [sum, n] = cells.try_emplace(codec.encode(x).indices, Vector::Zero(2), 0).first->second;
    sum += x;
    ++n;
  }
  int checked = 0;
  for (const auto& [key, acc] : cells) {
    if (acc.second < 20'000) continue;
    const Vector mc = acc.first / static_cast<double>(acc.second);
    const Vector exact = dec.decode({key});
    // Within-cell spread is at most the cell diagonal.
    EXPECT_LT((mc - exact).norm(), 4.0 * std::sqrt(2.0) / std::sqrt(static_cast<double>(acc.second)));
    ++checked;
  }
  EXPECT_GE(checked, 3);
}

TEST(CellMean, BeatsLatticeDecoder) {
  const auto src = presets::benchmark_source();
  const TransformCodec codec = fit_codec(src, 2.0);
  const CellMeanDecoder dec(src, codec);
  Rng rng = derive_stream(10, 0);
  const auto xs = src.sample(5000, rng);
  std::vector<Vector> lattice, cond;
  for (const auto& x : xs) {
    const Symbols s = codec.encode(x);
    lattice.push_back(codec.decode(s));
    cond.push_back(dec.decode(s));
  }
  EXPECT_LT(mse(xs, cond), mse(xs, lattice));
}

TEST(CellMean, EmptyCellRaises) {
  const GmmSource src = GmmSource::standard_normal(1);
  const TransformCodec codec = fit_codec(src, 0.5, 1.0, 100);
  const CellMeanDecoder dec(src, codec);
  EXPECT_THROW(dec.decode({{60}}), ZeroMassCode);
  EXPECT_THROW(dec.decode({{101}}), OutOfRange);
  EXPECT_NO_THROW(dec.decode({{3}}));
}

}  // namespace
