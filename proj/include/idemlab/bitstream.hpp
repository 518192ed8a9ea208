#pragma once

// Wire format (all multi-byte fields little-endian):
//
//   "IDC1"                     magic
//   u8   version = 1
//   u16  d
//   f64  step[d]
//   u8   companding flag (0 = none, 1 = power)
//   f64  gamma (1.0 when the flag is 0)
//   u16  R
//   u16  freq[d][2R+1]         entropy table per dimension, sums to 65536
//   ...  range-coded payload, dimension-major within each symbol vector
//
// A stream may carry several symbol vectors back to back; the count is
// known to the caller (one vector unless the batch functions are used).

#include "idemlab/errors.hpp"
#include "idemlab/range_coder.hpp"
#include "idemlab/transform_codec.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

namespace idemlab {

inline constexpr std::array<std::uint8_t, 4> kBitstreamMagic{'I', 'D', 'C', '1'};
inline constexpr std::uint8_t kBitstreamVersion = 1;

struct Bitstream {
  std::vector<std::uint8_t> bytes;

  std::size_t size() const noexcept { return bytes.size(); }
  friend bool operator==(const Bitstream&, const Bitstream&) = default;
};

struct BitstreamHeader {
  std::uint16_t dim = 0;
  std::vector<double> step;
  bool companding = false;
  double gamma = 1.0;
  std::uint16_t symbol_range = 0;
  std::vector<FrequencyTable> tables;
  std::size_t size_bytes = 0;  // header length, i.e. payload offset
};

namespace detail {

class ByteWriter {
 public:
  explicit ByteWriter(std::vector<std::uint8_t>& out) : out_(out) {}
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    out_.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out_.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

 private:
  std::vector<std::uint8_t>& out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}
  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(in_[pos_] | (in_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t position() const noexcept { return pos_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw CorruptStream("bitstream: header truncated");
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

inline void write_header(const TransformCodec& codec, std::vector<std::uint8_t>& out) {
  ByteWriter w(out);
  for (auto c : kBitstreamMagic) w.u8(c);
  w.u8(kBitstreamVersion);
  w.u16(static_cast<std::uint16_t>(codec.dim()));
  for (Eigen::Index i = 0; i < codec.dim(); ++i) w.f64(codec.step()[i]);
  w.u8(codec.companding().enabled() ? 1 : 0);
  w.f64(codec.companding().gamma());
  w.u16(static_cast<std::uint16_t>(codec.symbol_range()));
  for (const auto& table : codec.entropy_model())
    for (auto f : table.frequencies()) w.u16(static_cast<std::uint16_t>(f));
}

}  // namespace detail

inline BitstreamHeader parse_header(const Bitstream& b) {
  detail::ByteReader r(b.bytes);
  for (auto c : kBitstreamMagic)
    if (r.u8() != c) throw CorruptStream("bitstream: bad magic");
  if (r.u8() != kBitstreamVersion) throw CorruptStream("bitstream: unsupported version");
  BitstreamHeader h;
  h.dim = r.u16();
  if (h.dim == 0) throw CorruptStream("bitstream: zero dimension");
  h.step.resize(h.dim);
  for (auto& s : h.step) {
    s = r.f64();
    if (!(s > 0.0) || !std::isfinite(s)) throw CorruptStream("bitstream: invalid step");
  }
  const std::uint8_t flag = r.u8();
  if (flag > 1) throw CorruptStream("bitstream: invalid companding flag");
  h.companding = flag == 1;
  h.gamma = r.f64();
  if (!(h.gamma > 0.0 && h.gamma <= 1.0)) throw CorruptStream("bitstream: invalid gamma");
  h.symbol_range = r.u16();
  if (h.symbol_range == 0 || h.symbol_range > TransformCodec::kMaxSymbolRange)
    throw CorruptStream("bitstream: invalid symbol range");
  const std::size_t bins = 2 * static_cast<std::size_t>(h.symbol_range) + 1;
  h.tables.reserve(h.dim);
  for (std::size_t i = 0; i < h.dim; ++i) {
    std::vector<std::uint32_t> freq(bins);
    for (auto& f : freq) f = r.u16();
    try {
      h.tables.emplace_back(std::move(freq));
    } catch (const InvalidArgument& e) {
      throw CorruptStream(std::string("bitstream: bad entropy table: ") + e.what());
    }
  }
  h.size_bytes = r.position();
  return h;
}

inline Bitstream serialize_batch(const TransformCodec& codec, std::span<const Symbols> batch) {
  Bitstream b;
  detail::write_header(codec, b.bytes);
  if (batch.empty()) return b;  // header only, no coder flush
  RangeEncoder enc(b.bytes);
  for (const auto& s : batch) {
    if (!codec.in_range(s)) throw OutOfRange("serialize: symbols out of range or wrong length");
    for (Eigen::Index i = 0; i < codec.dim(); ++i) enc.encode(codec.table(i), codec.bin_of(s.indices[i]));
  }
  enc.finish();
  return b;
}

inline Bitstream serialize(const TransformCodec& codec, const Symbols& s) {
  return serialize_batch(codec, std::span<const Symbols>(&s, 1));
}

inline std::vector<Symbols> deserialize_batch(const Bitstream& b, std::size_t count) {
  const BitstreamHeader h = parse_header(b);
  if (count == 0) {
    if (b.size() != h.size_bytes) throw CorruptStream("bitstream: trailing payload bytes");
    return {};
  }
  RangeDecoder dec(std::span<const std::uint8_t>(b.bytes).subspan(h.size_bytes));
  std::vector<Symbols> out(count);
  for (auto& s : out) {
    s.indices.resize(h.dim);
    for (std::size_t i = 0; i < h.dim; ++i)
      s.indices[i] = static_cast<std::int32_t>(dec.decode(h.tables[i])) - h.symbol_range;
  }
  if (!dec.exhausted()) throw CorruptStream("bitstream: trailing payload bytes");
  return out;
}

inline Symbols deserialize(const Bitstream& b) { return deserialize_batch(b, 1).front(); }

inline std::size_t header_size(const Bitstream& b) { return parse_header(b).size_bytes; }

inline double payload_bits(const Bitstream& b) {
  return 8.0 * static_cast<double>(b.size() - header_size(b));
}

// 8 * byte_length / pixel_count, header included.
inline double rate_bpp(const Bitstream& b, std::size_t pixel_count) {
  if (pixel_count == 0) throw InvalidArgument("rate_bpp: pixel_count must be positive");
  return 8.0 * static_cast<double>(b.size()) / static_cast<double>(pixel_count);
}

}  // namespace idemlab
