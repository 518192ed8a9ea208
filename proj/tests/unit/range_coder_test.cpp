#include "idemlab/bitstream.hpp"
#include "idemlab/random.hpp"
#include "idemlab/range_coder.hpp"
#include "idemlab/transform_codec.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace idemlab;

namespace {

std::vector<std::uint8_t> encode_all(const FrequencyTable& t, const std::vector<std::size_t>& symbols) {
  std::vector<std::uint8_t> out;
  RangeEncoder enc(out);
  for (auto s : symbols) enc.encode(t, s);
  enc.finish();
  return out;
}

std::vector<std::size_t> decode_all(const FrequencyTable& t, const std::vector<std::uint8_t>& bytes,
                                    std::size_t n) {
  RangeDecoder dec(bytes);
  std::vector<std::size_t> out(n);
  for (auto& s : out) s = dec.decode(t);
  EXPECT_TRUE(dec.exhausted());
  return out;
}

TEST(FrequencyTable, Validation) {
  EXPECT_THROW(FrequencyTable({65536}), InvalidArgument);
  EXPECT_THROW(FrequencyTable({0, 65536}), InvalidArgument);
  EXPECT_THROW(FrequencyTable({1, 2}), InvalidArgument);
  EXPECT_NO_THROW(FrequencyTable({1, 65535}));
}

TEST(FrequencyTable, FromWeightsKeepsEverySymbol) {
  const std::vector<double> w{1.0, 0.0, 0.0, 1e-12};
  const auto t = FrequencyTable::from_weights(w);
  std::uint32_t sum = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_GE(t.frequency(i), 1u);
    sum += t.frequency(i);
  }
  EXPECT_EQ(sum, kFrequencyTotal);
  EXPECT_EQ(t.frequency(1), 1u);
}

TEST(FrequencyTable, FromWeightsUniform) {
  const std::vector<double> w(4, 0.25);
  const auto t = FrequencyTable::from_weights(w);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(t.frequency(i), 16384u);
}

TEST(FrequencyTable, Lookup) {
  const FrequencyTable t({100, 65000, 436});
  EXPECT_EQ(t.lookup(0), 0u);
  EXPECT_EQ(t.lookup(99), 0u);
  EXPECT_EQ(t.lookup(100), 1u);
  EXPECT_EQ(t.lookup(65099), 1u);
  EXPECT_EQ(t.lookup(65100), 2u);
  EXPECT_EQ(t.lookup(65535), 2u);
}

TEST(RangeCoder, EmptyStreamIsFourBytes) {
  const FrequencyTable t({32768, 32768});
  EXPECT_EQ(encode_all(t, {}).size(), 4u);
}

TEST(RangeCoder, UniformFourSymbolsRate) {
  const auto t = FrequencyTable::from_weights(std::vector<double>(4, 1.0));
  Rng rng = derive_stream(1, 0);
  std::uniform_int_distribution<std::size_t> pick(0, 3);
  std::vector<std::size_t> symbols(1000);
  for (auto& s : symbols) s = pick(rng);
  const auto bytes = encode_all(t, symbols);
  // 32 bits of coder flush on top of the ideal length.
  EXPECT_NEAR(8.0 * bytes.size() - 32.0, 2000.0, 16.0);
  EXPECT_EQ(decode_all(t, bytes, symbols.size()), symbols);
}

TEST(RangeCoder, SkewedBinaryRate) {
  const std::vector<double> w{0.9, 0.1};
  const auto t = FrequencyTable::from_weights(w);
  Rng rng = derive_stream(2, 0);
  std::bernoulli_distribution one(0.1);
  std::vector<std::size_t> symbols(10000);
  double info = 0.0;
  for (auto& s : symbols) {
    s = one(rng) ? 1 : 0;
    info += t.information_bits(s);
  }
  const auto bytes = encode_all(t, symbols);
  const double bits = 8.0 * bytes.size();
  EXPECT_NEAR(bits, 4690.0, 0.02 * 4690.0);
  EXPECT_NEAR(bits - 32.0, info, 32.0);  // 32-bit flush is the coder constant
  EXPECT_EQ(decode_all(t, bytes, symbols.size()), symbols);
}

TEST(RangeCoder, ExtremeProbabilities) {
  // One near-certain symbol and rare ones stress the range underflow path.
  std::vector<std::uint32_t> f(9, 1);
  f[4] = kFrequencyTotal - 8;
  const FrequencyTable t(f);
  Rng rng = derive_stream(3, 0);
  std::uniform_int_distribution<int> coin(0, 99);
  std::uniform_int_distribution<std::size_t> any(0, 8);
  std::vector<std::size_t> symbols(20000);
  for (auto& s : symbols) s = coin(rng) < 97 ? 4 : any(rng);
  EXPECT_EQ(decode_all(t, encode_all(t, symbols), symbols.size()), symbols);
}

TEST(RangeCoder, TruncatedStreamThrows) {
  const auto t = FrequencyTable::from_weights(std::vector<double>(4, 1.0));
  std::vector<std::size_t> symbols(100, 3);
  auto bytes = encode_all(t, symbols);
  bytes.resize(bytes.size() - 2);
  RangeDecoder dec(bytes);
  EXPECT_THROW(
      {
        for (std::size_t i = 0; i < symbols.size() + 8; ++i) dec.decode(t);
      },
      CorruptStream);
}

TransformCodec identity_codec(Eigen::Index d, int range, double step = 1.0) {
  std::vector<FrequencyTable> tables;
  for (Eigen::Index i = 0; i < d; ++i)
    tables.push_back(FrequencyTable::from_weights(std::vector<double>(2 * range + 1, 1.0)));
  return TransformCodec(Matrix::Identity(d, d), Vector::Constant(1, step), Companding::none(), range,
                        std::move(tables));
}

TEST(Bitstream, RoundTripRandomSymbols) {
  Rng rng = derive_stream(4, 0);
  const auto codec = identity_codec(3, 7, 0.5);
  std::uniform_int_distribution<int> idx(-7, 7);
  for (int trial = 0; trial < 10000; ++trial) {
    Symbols s;
    for (int i = 0; i < 3; ++i) s.indices.push_back(idx(rng));
    const Bitstream b = serialize(codec, s);
    ASSERT_EQ(deserialize(b), s);
  }
}

TEST(Bitstream, HeaderLayout) {
  const auto codec = identity_codec(2, 1, 0.25);
  const Bitstream b = serialize(codec, Symbols{{0, 1}});
  ASSERT_GE(b.size(), 4u);
  EXPECT_EQ(b.bytes[0], 'I');
  EXPECT_EQ(b.bytes[3], '1');
  EXPECT_EQ(b.bytes[4], 1);  // version
  EXPECT_EQ(b.bytes[5], 2);  // d, low byte
  EXPECT_EQ(b.bytes[6], 0);
  // 4 + 1 + 2 + 8d + 1 + 8 + 2 + 2 d (2R+1)
  EXPECT_EQ(header_size(b), 4u + 1 + 2 + 16 + 1 + 8 + 2 + 2 * 2 * 3);
  const auto h = parse_header(b);
  EXPECT_EQ(h.dim, 2);
  EXPECT_EQ(h.step[1], 0.25);
  EXPECT_FALSE(h.companding);
  EXPECT_EQ(h.symbol_range, 1);
  EXPECT_EQ(h.tables[0], codec.table(0));
}

TEST(Bitstream, CorruptionDetected) {
  const auto codec = identity_codec(2, 3);
  const Bitstream good = serialize(codec, Symbols{{1, -2}});
  Bitstream bad = good;
  bad.bytes[0] = 'X';
  EXPECT_THROW(deserialize(bad), CorruptStream);
  bad = good;
  bad.bytes[4] = 2;
  EXPECT_THROW(deserialize(bad), CorruptStream);
  bad = good;
  bad.bytes.resize(10);
  EXPECT_THROW(deserialize(bad), CorruptStream);
  bad = good;
  bad.bytes.push_back(0);
  EXPECT_THROW(deserialize(bad), CorruptStream);
  bad = good;
  bad.bytes.resize(bad.bytes.size() - 1);
  EXPECT_THROW(deserialize(bad), CorruptStream);
}

TEST(Bitstream, OutOfRangeSymbolsRejected) {
  const auto codec = identity_codec(2, 3);
  EXPECT_THROW(serialize(codec, Symbols{{4, 0}}), OutOfRange);
  EXPECT_THROW(serialize(codec, Symbols{{0}}), OutOfRange);
}

TEST(Bitstream, BatchRoundTripAndRate) {
  const auto codec = identity_codec(2, 2);
  std::vector<Symbols> batch;
  Rng rng = derive_stream(5, 0);
  std::uniform_int_distribution<int> idx(-2, 2);
  for (int i = 0; i < 5000; ++i) batch.push_back(Symbols{{idx(rng), idx(rng)}});
  const Bitstream b = serialize_batch(codec, batch);
  EXPECT_EQ(deserialize_batch(b, batch.size()), batch);
  const double ideal = 10000 * std::log2(5.0);
  EXPECT_NEAR(payload_bits(b), ideal, 0.02 * ideal);
}

TEST(RateBpp, Arithmetic) {
  Bitstream b;
  b.bytes.resize(32);
  EXPECT_DOUBLE_EQ(rate_bpp(b, 256), 1.0);
  EXPECT_THROW(rate_bpp(b, 0), InvalidArgument);
  const auto codec = identity_codec(1, 1);
  const Bitstream empty = serialize_batch(codec, {});
  EXPECT_DOUBLE_EQ(rate_bpp(empty, 10), 8.0 * header_size(empty) / 10.0);
  EXPECT_TRUE(deserialize_batch(empty, 0).empty());
}

}  // namespace
