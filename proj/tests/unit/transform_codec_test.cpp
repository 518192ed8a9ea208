#include "idemlab/bitstream.hpp"
#include "idemlab/metrics.hpp"
#include "idemlab/random.hpp"
#include "idemlab/transform_codec.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace idemlab;

namespace {

TransformCodec make_codec(const Matrix& a, double step, Companding comp = Companding::none(), int range = 50) {
  std::vector<FrequencyTable> tables;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    tables.push_back(FrequencyTable::from_weights(std::vector<double>(2 * range + 1, 1.0)));
  return TransformCodec(a, Vector::Constant(1, step), comp, range, std::move(tables));
}

Matrix rotation(double angle) {
  Matrix r(2, 2);
  r << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  return r;
}

std::vector<Vector> gaussian_samples(const Vector& sd, std::size_t n, Rng& rng) {
  std::vector<Vector> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(sd.cwiseProduct(standard_normal(sd.size(), rng)));
  return out;
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

TEST(Fit, IsotropicOrthogonal) {
  Rng rng = derive_stream(1, 0);
  const auto samples = gaussian_samples(Vector::Ones(4), 2000, rng);
  const auto codec = TransformCodec::fit(samples, {Vector::Constant(1, 0.5)});
  const Matrix& a = codec.transform();
  EXPECT_LT((a.transpose() * a - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Fit, PrincipalAxis) {
  Rng rng = derive_stream(2, 0);
  const auto samples = gaussian_samples(vec({2.0, 1.0}), 100000, rng);
  const auto codec = TransformCodec::fit(samples, {Vector::Constant(1, 0.5)});
  const Vector c0 = codec.transform().col(0);
  EXPECT_LT((c0 - vec({1.0, 0.0})).cwiseAbs().maxCoeff(), 1e-2);
}

TEST(Fit, OneDimensionalSign) {
  Rng rng = derive_stream(3, 0);
  const auto samples = gaussian_samples(vec({1.5}), 100, rng);
  const auto codec = TransformCodec::fit(samples, {Vector::Constant(1, 0.5)});
  EXPECT_EQ(codec.transform()(0, 0), 1.0);
}

TEST(Fit, RankDeficient) {
  std::vector<Vector> line;
  for (int i = 0; i < 10; ++i) line.push_back(vec({double(i), 2.0 * i}));
  EXPECT_THROW(TransformCodec::fit(line, {Vector::Constant(1, 1.0)}), RankDeficient);
  std::vector<Vector> few{vec({0, 1}), vec({1, 0})};
  EXPECT_THROW(TransformCodec::fit(few, {Vector::Constant(1, 1.0)}), RankDeficient);
}

TEST(Fit, RangeCoversData) {
  Rng rng = derive_stream(4, 0);
  const auto samples = gaussian_samples(vec({3.0, 0.5}), 5000, rng);
  const auto codec = TransformCodec::fit(samples, {Vector::Constant(1, 0.25)});
  for (const auto& x : samples) {
    const Vector u = codec.transform().transpose() * x;
    for (Eigen::Index i = 0; i < 2; ++i)
      EXPECT_LT(std::abs(std::nearbyint(u[i] / 0.25)), codec.symbol_range());
  }
}

TEST(Encode, Rounding) {
  const auto codec = make_codec(Matrix::Identity(2, 2), 1.0);
  EXPECT_EQ(codec.encode(vec({0.4, -1.6})).indices, (std::vector<std::int32_t>{0, -2}));
  EXPECT_EQ(codec.encode(Vector::Zero(2)).indices, (std::vector<std::int32_t>{0, 0}));
  EXPECT_EQ(codec.encode(vec({0.5, 1.5})).indices, (std::vector<std::int32_t>{0, 2}));
  EXPECT_EQ(codec.encode(vec({-0.5, 2.5})).indices, (std::vector<std::int32_t>{0, 2}));
  const auto half = make_codec(Matrix::Identity(1, 1), 0.5);
  EXPECT_EQ(half.encode(vec({0.75})).indices, (std::vector<std::int32_t>{2}));
}

TEST(Encode, ClampsOutliers) {
  const auto codec = make_codec(Matrix::Identity(2, 2), 1.0, Companding::none(), 3);
  EXPECT_EQ(codec.encode(vec({100.0, -1e9})).indices, (std::vector<std::int32_t>{3, -3}));
}

TEST(Encode, RejectsBadInput) {
  const auto codec = make_codec(Matrix::Identity(2, 2), 1.0);
  EXPECT_THROW(codec.encode(vec({NAN, 0.0})), NonFinite);
  EXPECT_THROW(codec.encode(vec({0.0})), LengthMismatch);
}

TEST(Decode, ZeroAndLattice) {
  const auto codec = make_codec(rotation(0.3), 0.7);
  EXPECT_EQ(codec.decode(Symbols{{0, 0}}), Vector::Zero(2));
  Rng rng = derive_stream(5, 0);
  std::uniform_int_distribution<int> idx(-50, 50);
  for (int trial = 0; trial < 2000; ++trial) {
    const Symbols s{{idx(rng), idx(rng)}};
    EXPECT_EQ(codec.encode(codec.decode(s)), s);
  }
}

TEST(Decode, IdempotentWithoutCompanding) {
  const auto codec = make_codec(rotation(1.1), 0.37);
  Rng rng = derive_stream(6, 0);
  for (int trial = 0; trial < 5000; ++trial) {
    const Vector x = 5.0 * standard_normal(2, rng);
    const Symbols s = codec.encode(x);
    EXPECT_EQ(codec.encode(codec.decode(s)), s);
  }
}

TEST(Decode, CompandingBreaksIdempotence) {
  const auto codec = make_codec(rotation(0.6), 0.3, Companding(1.0 / 3.0));
  Rng rng = derive_stream(7, 0);
  int drifted = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Symbols s = codec.encode(standard_normal(2, rng));
    if (codec.encode(codec.decode(s)) != s) ++drifted;
  }
  EXPECT_GT(drifted, 0);
}

TEST(Ste, IdentityGradient) {
  const auto codec = make_codec(Matrix::Identity(2, 2), 1.0);
  const Vector x = vec({0.4, -1.6});
  const Symbols target{{1, -1}};
  const auto ste = codec.encode_ste(x);
  Vector r(2);
  for (int i = 0; i < 2; ++i) r[i] = ste.symbols.indices[i] - target.indices[i];
  const Vector grad = ste.jacobian.transpose() * r;
  EXPECT_EQ(grad, vec({-1.0, -1.0}));
  const auto self = codec.encode_ste(x);
  EXPECT_EQ(self.jacobian.transpose() * Vector::Zero(2), Vector::Zero(2));
}

TEST(Ste, NormScalesWithStep) {
  Rng rng = derive_stream(8, 0);
  const double step = 0.6;
  const auto codec = make_codec(rotation(0.9), step);
  for (int trial = 0; trial < 100; ++trial) {
    const Vector x = 3.0 * standard_normal(2, rng);
    const auto ste = codec.encode_ste(x);
    const Vector r = standard_normal(2, rng);
    EXPECT_NEAR((ste.jacobian.transpose() * r).norm(), r.norm() / step, 1e-12);
  }
}

// The smoothed encoder compand(A^T x) / step has the STE jacobian exactly.
TEST(Ste, MatchesFiniteDifferences) {
  Rng rng = derive_stream(9, 0);
  for (double gamma : {1.0, 0.5, 1.0 / 3.0}) {
    const auto codec = make_codec(rotation(0.4), 0.3, Companding(gamma));
    auto smooth = [&](const Vector& x) {
      const Vector u = codec.transform().transpose() * x;
      Vector v(2);
      for (int i = 0; i < 2; ++i) v[i] = codec.companding().forward(u[i]) / 0.3;
      return v;
    };
    const double edge = codec.companding().inverse(0.15);
    int checked = 0;
    while (checked < 50) {
      const Vector x = 2.0 * standard_normal(2, rng);
      const Vector u = codec.transform().transpose() * x;
      if (u.cwiseAbs().minCoeff() < edge + 0.05) continue;
      const Matrix jac = codec.encode_ste(x).jacobian;
      for (int j = 0; j < 2; ++j) {
        const double h = 1e-6;
        Vector e = Vector::Zero(2);
        e[j] = h;
        const Vector fd = (smooth(x + e) - smooth(x - e)) / (2 * h);
        for (int i = 0; i < 2; ++i) EXPECT_NEAR(jac(i, j), fd[i], 1e-6 * std::max(1.0, std::abs(fd[i])));
      }
      ++checked;
    }
  }
}

TEST(DecodeJacobian, MatchesFiniteDifferences) {
  const auto codec = make_codec(rotation(0.4), 0.3, Companding(0.5));
  const Symbols s{{4, -7}};
  const Matrix jac = codec.decode_jacobian(s);
  // Treat the symbols as continuous: x(s) = decompand(A step s).
  auto decode_cont = [&](const Vector& sv) {
    Vector z = codec.transform() * (0.3 * sv);
    for (int i = 0; i < 2; ++i) z[i] = codec.companding().inverse(z[i]);
    return z;
  };
  const Vector s0 = vec({4.0, -7.0});
  for (int j = 0; j < 2; ++j) {
    Vector e = Vector::Zero(2);
    e[j] = 1e-6;
    const Vector fd = (decode_cont(s0 + e) - decode_cont(s0 - e)) / 2e-6;
    for (int i = 0; i < 2; ++i) EXPECT_NEAR(jac(i, j), fd[i], 1e-6 * std::max(1.0, std::abs(fd[i])));
  }
}

TEST(RateDistortion, MonotoneInStep) {
  Rng rng = derive_stream(10, 0);
  const auto train = gaussian_samples(vec({1.5, 0.8}), 4000, rng);
  const auto test = gaussian_samples(vec({1.5, 0.8}), 4000, rng);
  double last_bpp = std::numeric_limits<double>::infinity(), last_mse = -1.0;
  for (double step : {0.1, 0.2, 0.4, 0.8, 1.6}) {
    const auto codec = TransformCodec::fit(train, {Vector::Constant(1, step)});
    std::vector<Symbols> symbols;
    std::vector<Vector> recon;
    for (const auto& x : test) {
      symbols.push_back(codec.encode(x));
      recon.push_back(codec.decode(symbols.back()));
    }
    const double bpp = payload_bits(serialize_batch(codec, symbols)) / (2.0 * test.size());
    const double err = mse(test, recon);
    EXPECT_LT(bpp, last_bpp);
    EXPECT_GT(err, last_mse);
    last_bpp = bpp;
    last_mse = err;
  }
}

TEST(Codec, ConstructorValidation) {
  std::vector<FrequencyTable> two(2, FrequencyTable::from_weights(std::vector<double>(3, 1.0)));
  Matrix skew(2, 2);
  skew << 1, 0.1, 0, 1;
  EXPECT_THROW(TransformCodec(skew, Vector::Constant(1, 1.0), Companding::none(), 1, two), InvalidArgument);
  EXPECT_THROW(TransformCodec(Matrix::Identity(2, 2), Vector::Constant(1, 0.0), Companding::none(), 1, two),
               InvalidArgument);
  EXPECT_THROW(TransformCodec(Matrix::Identity(2, 2), Vector::Constant(1, 1.0), Companding::none(), 2, two),
               InvalidArgument);
  EXPECT_THROW(Companding(0.0), InvalidArgument);
  EXPECT_THROW(Companding(1.5), InvalidArgument);
}

TEST(Codec, WireRoundTripOfFittedCodec) {
  Rng rng = derive_stream(11, 0);
  const auto train = gaussian_samples(vec({1.0, 0.5, 2.0}), 3000, rng);
  const auto codec = TransformCodec::fit(train, {Vector::Constant(1, 0.3), Companding(0.5)});
  const auto h = parse_header(serialize(codec, codec.encode(train[0])));
  EXPECT_TRUE(h.companding);
  EXPECT_EQ(h.gamma, 0.5);
  EXPECT_EQ(h.symbol_range, codec.symbol_range());
  for (int i = 0; i < 3; ++i) EXPECT_EQ(h.tables[i], codec.table(i));
  for (int i = 0; i < 200; ++i) {
    const Symbols s = codec.encode(train[i]);
    EXPECT_EQ(deserialize(serialize(codec, s)), s);
  }
}

}  // namespace
