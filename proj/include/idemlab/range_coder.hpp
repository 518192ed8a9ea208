#pragma once

// Carry-less range coder (Subbotin style) over static 16-bit frequency
// tables. Both sides keep a 32-bit low/range pair; the encoder avoids carry
// propagation by shrinking the range whenever the top byte is unsettled and
// the range has fallen below 2^16. The decoder consumes exactly as many bytes
// as the encoder produced.

#include "idemlab/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace idemlab {

inline constexpr unsigned kFrequencyBits = 16;
inline constexpr std::uint32_t kFrequencyTotal = std::uint32_t{1} << kFrequencyBits;

// Static model: every symbol has frequency >= 1 and frequencies sum to 2^16.
class FrequencyTable {
 public:
  FrequencyTable() = default;

  explicit FrequencyTable(std::vector<std::uint32_t> freq) : freq_(std::move(freq)) {
    if (freq_.size() < 2) throw InvalidArgument("FrequencyTable: need at least two symbols");
    cumulative_.resize(freq_.size() + 1, 0);
    for (std::size_t i = 0; i < freq_.size(); ++i) {
      if (freq_[i] == 0) throw InvalidArgument("FrequencyTable: zero frequency");
      cumulative_[i + 1] = cumulative_[i] + freq_[i];
    }
    if (cumulative_.back() != kFrequencyTotal)
      throw InvalidArgument("FrequencyTable: frequencies must sum to 65536");
  }

  // Largest-remainder quantization of non-negative weights, reserving one
  // count per symbol. Ties go to the lowest index.
  static FrequencyTable from_weights(std::span<const double> weights) {
    const std::size_t n = weights.size();
    if (n < 2 || n > kFrequencyTotal) throw InvalidArgument("FrequencyTable: bad alphabet size");
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidArgument("FrequencyTable: bad weight");
      total += w;
    }
    const auto spare = static_cast<double>(kFrequencyTotal - n);
    std::vector<std::uint32_t> freq(n, 1);
    std::vector<double> remainder(n, 0.0);
    std::uint32_t assigned = static_cast<std::uint32_t>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double share = total > 0.0 ? spare * weights[i] / total : spare / static_cast<double>(n);
      const auto whole = static_cast<std::uint32_t>(std::floor(share));
      freq[i] += whole;
      assigned += whole;
      remainder[i] = share - whole;
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t k = 0; assigned < kFrequencyTotal; k = (k + 1) % n, ++assigned) ++freq[order[k]];
    return FrequencyTable(std::move(freq));
  }

  std::size_t size() const noexcept { return freq_.size(); }
  std::uint32_t frequency(std::size_t s) const { return freq_.at(s); }
  std::uint32_t cumulative(std::size_t s) const { return cumulative_.at(s); }
  double probability(std::size_t s) const {
    return static_cast<double>(freq_.at(s)) / kFrequencyTotal;
  }
  const std::vector<std::uint32_t>& frequencies() const noexcept { return freq_; }

  // Symbol whose cumulative interval contains target (target < 2^16).
  std::size_t lookup(std::uint32_t target) const {
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), target);
    return static_cast<std::size_t>(it - cumulative_.begin()) - 1;
  }

  // Ideal code length of a symbol under this model, in bits.
  double information_bits(std::size_t s) const { return -std::log2(probability(s)); }

  friend bool operator==(const FrequencyTable&, const FrequencyTable&) = default;

 private:
  std::vector<std::uint32_t> freq_;
  std::vector<std::uint32_t> cumulative_;
};

class RangeEncoder {
 public:
  explicit RangeEncoder(std::vector<std::uint8_t>& out) : out_(out) {}

  void encode(const FrequencyTable& table, std::size_t symbol) {
    range_ >>= kFrequencyBits;
    low_ += table.cumulative(symbol) * range_;
    range_ *= table.frequency(symbol);
    normalize();
  }

  // Writes the final four bytes of state. The encoder must not be used after.
  void finish() {
    for (int i = 0; i < 4; ++i) {
      out_.push_back(static_cast<std::uint8_t>(low_ >> 24));
      low_ <<= 8;
    }
  }

 private:
  void normalize() {
    for (;;) {
      if ((low_ ^ (low_ + range_)) >= kTop) {
        if (range_ >= kBottom) break;
        range_ = (0u - low_) & (kBottom - 1);
      }
      out_.push_back(static_cast<std::uint8_t>(low_ >> 24));
      low_ <<= 8;
      range_ <<= 8;
    }
  }

  static constexpr std::uint32_t kTop = std::uint32_t{1} << 24;
  static constexpr std::uint32_t kBottom = std::uint32_t{1} << 16;

  std::vector<std::uint8_t>& out_;
  std::uint32_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> in) : in_(in) {
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next();
  }

  std::size_t decode(const FrequencyTable& table) {
    range_ >>= kFrequencyBits;
    const std::uint32_t target = (code_ - low_) / range_;
    if (target >= kFrequencyTotal) throw CorruptStream("range decoder: target out of range");
    const std::size_t symbol = table.lookup(target);
    low_ += table.cumulative(symbol) * range_;
    range_ *= table.frequency(symbol);
    normalize();
    return symbol;
  }

  std::size_t consumed() const noexcept { return pos_; }
  bool exhausted() const noexcept { return pos_ == in_.size(); }

 private:
  std::uint32_t next() {
    if (pos_ >= in_.size()) throw CorruptStream("range decoder: payload truncated");
    return in_[pos_++];
  }

  void normalize() {
    for (;;) {
      if ((low_ ^ (low_ + range_)) >= kTop) {
        if (range_ >= kBottom) break;
        range_ = (0u - low_) & (kBottom - 1);
      }
      code_ = (code_ << 8) | next();
      low_ <<= 8;
      range_ <<= 8;
    }
  }

  static constexpr std::uint32_t kTop = std::uint32_t{1} << 24;
  static constexpr std::uint32_t kBottom = std::uint32_t{1} << 16;

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  std::uint32_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t code_ = 0;
};

}  // namespace idemlab
