#pragma once

// Finite-alphabet laboratory: sources, deterministic table codecs, exact
// posteriors and the enumeration checks relating posterior sampling to
// idempotence.

#include "idemlab/errors.hpp"
#include "idemlab/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace idemlab::discrete {

using Symbol = std::size_t;
using Code = std::size_t;

inline constexpr double kPmfTolerance = 1e-12;

class FiniteSource {
 public:
  FiniteSource(std::vector<double> pmf, std::vector<double> values)
      : pmf_(std::move(pmf)), values_(std::move(values)) {
    if (pmf_.empty()) throw InvalidArgument("FiniteSource: empty alphabet");
    if (pmf_.size() != values_.size())
      throw InvalidArgument("FiniteSource: pmf and values differ in length");
    double total = 0.0;
    for (double p : pmf_) {
      if (!(p >= 0.0) || !std::isfinite(p)) throw InvalidArgument("FiniteSource: negative mass");
      total += p;
    }
    if (std::abs(total - 1.0) > kPmfTolerance)
      throw InvalidArgument("FiniteSource: pmf sums to " + std::to_string(total));
    for (std::size_t i = 1; i < values_.size(); ++i)
      if (!(values_[i] > values_[i - 1]))
        throw InvalidArgument("FiniteSource: values must be strictly increasing");
  }

  static FiniteSource uniform(std::size_t n) {
    std::vector<double> values(n);
    std::iota(values.begin(), values.end(), 0.0);
    return {std::vector<double>(n, 1.0 / static_cast<double>(n)), std::move(values)};
  }

  std::size_t size() const noexcept { return pmf_.size(); }
  const std::vector<double>& pmf() const noexcept { return pmf_; }
  const std::vector<double>& values() const noexcept { return values_; }
  double mass(Symbol x) const { return pmf_.at(x); }
  double value(Symbol x) const { return values_.at(x); }

  double mean() const {
    double m = 0.0;
    for (std::size_t i = 0; i < size(); ++i) m += pmf_[i] * values_[i];
    return m;
  }

  double variance() const {
    const double m = mean();
    double v = 0.0;
    for (std::size_t i = 0; i < size(); ++i) v += pmf_[i] * (values_[i] - m) * (values_[i] - m);
    return v;
  }

 private:
  std::vector<double> pmf_;
  std::vector<double> values_;
};

// Deterministic encoder table f: [n] -> [m] and decoder g: [m] -> R.
class TabularCodec {
 public:
  TabularCodec(std::vector<Code> encode_map, std::vector<double> decode_values)
      : encode_map_(std::move(encode_map)), decode_values_(std::move(decode_values)) {
    if (decode_values_.empty()) throw InvalidArgument("TabularCodec: no codes");
    for (Code y : encode_map_)
      if (y >= decode_values_.size()) throw InvalidArgument("TabularCodec: code index out of range");
    for (double v : decode_values_)
      if (!std::isfinite(v)) throw InvalidArgument("TabularCodec: non-finite decode value");
  }

  static TabularCodec identity(const FiniteSource& source) {
    std::vector<Code> map(source.size());
    std::iota(map.begin(), map.end(), Code{0});
    return {std::move(map), source.values()};
  }

  static TabularCodec constant(const FiniteSource& source, double decode_value) {
    return {std::vector<Code>(source.size(), 0), {decode_value}};
  }

  std::size_t alphabet_size() const noexcept { return encode_map_.size(); }
  std::size_t code_count() const noexcept { return decode_values_.size(); }
  Code encode(Symbol x) const { return encode_map_.at(x); }
  double decode(Code y) const { return decode_values_.at(y); }
  const std::vector<Code>& encode_map() const noexcept { return encode_map_; }
  const std::vector<double>& decode_values() const noexcept { return decode_values_; }

 private:
  std::vector<Code> encode_map_;
  std::vector<double> decode_values_;
};

inline void require_compatible(const FiniteSource& source, const TabularCodec& codec) {
  if (source.size() != codec.alphabet_size())
    throw LengthMismatch("codec alphabet does not match source alphabet");
}

// p_Y(y) for every code.
inline std::vector<double> code_masses(const FiniteSource& source, const TabularCodec& codec) {
  require_compatible(source, codec);
  std::vector<double> mass(codec.code_count(), 0.0);
  for (Symbol x = 0; x < source.size(); ++x) mass[codec.encode(x)] += source.mass(x);
  return mass;
}

inline double code_entropy_bits(const FiniteSource& source, const TabularCodec& codec) {
  double h = 0.0;
  for (double p : code_masses(source, codec))
    if (p > 0.0) h -= p * std::log2(p);
  return h;
}

// E[(X - g(f(X)))^2]
inline double codec_mse(const FiniteSource& source, const TabularCodec& codec) {
  require_compatible(source, codec);
  double mse = 0.0;
  for (Symbol x = 0; x < source.size(); ++x) {
    const double err = source.value(x) - codec.decode(codec.encode(x));
    mse += source.mass(x) * err * err;
  }
  return mse;
}

inline std::vector<Symbol> inverse_image(const TabularCodec& codec, Code y) {
  if (y >= codec.code_count()) throw OutOfRange("inverse_image: code out of range");
  std::vector<Symbol> preimage;
  for (Symbol x = 0; x < codec.alphabet_size(); ++x)
    if (codec.encode(x) == y) preimage.push_back(x);
  return preimage;
}

inline std::vector<double> exact_posterior(const FiniteSource& source, const TabularCodec& codec,
                                           Code y) {
  if (y >= codec.code_count()) throw OutOfRange("exact_posterior: code out of range");
  const double py = code_masses(source, codec)[y];
  if (!(py > 0.0)) throw ZeroMassCode("code " + std::to_string(y) + " has zero probability");
  std::vector<double> posterior(source.size(), 0.0);
  for (Symbol x = 0; x < source.size(); ++x)
    if (codec.encode(x) == y) posterior[x] = source.mass(x) / py;
  return posterior;
}

// p_{X|Y}; rows of zero-mass codes are left undefined.
struct PosteriorTable {
  std::vector<std::optional<std::vector<double>>> rows;
};

inline PosteriorTable posterior_table(const FiniteSource& source, const TabularCodec& codec) {
  const auto masses = code_masses(source, codec);
  PosteriorTable table;
  table.rows.resize(codec.code_count());
  for (Code y = 0; y < codec.code_count(); ++y)
    if (masses[y] > 0.0) table.rows[y] = exact_posterior(source, codec, y);
  return table;
}

// Draws X ~ p_X and keeps only draws with f(X) = y.
inline std::vector<Symbol> rejection_sample_constrained(const FiniteSource& source,
                                                        const TabularCodec& codec, Code y,
                                                        std::size_t n, Rng& rng) {
  if (y >= codec.code_count()) throw OutOfRange("rejection sampling: code out of range");
  if (n == 0) throw InvalidArgument("rejection sampling: n must be >= 1");
  if (!(code_masses(source, codec)[y] > 0.0))
    throw ZeroMassCode("code " + std::to_string(y) + " has zero probability");
  std::discrete_distribution<Symbol> draw(source.pmf().begin(), source.pmf().end());
  std::vector<Symbol> samples;
  samples.reserve(n);
  while (samples.size() < n) {
    const Symbol x = draw(rng);
    if (codec.encode(x) == y) samples.push_back(x);
  }
  return samples;
}

inline std::vector<double> empirical_pmf(std::span<const Symbol> samples, std::size_t alphabet) {
  std::vector<double> pmf(alphabet, 0.0);
  for (Symbol x : samples) pmf.at(x) += 1.0;
  for (double& p : pmf) p /= static_cast<double>(samples.size());
  return pmf;
}

struct Theorem1Violation {
  Code code;
  Symbol symbol;
  double posterior_mass;
};

struct Theorem1Report {
  std::vector<Theorem1Violation> violations;
  std::size_t codes_checked = 0;
  bool passed() const noexcept { return violations.empty(); }
};

// Every symbol carrying posterior mass for code y must encode back to y.
inline Theorem1Report check_theorem1(const TabularCodec& codec, const PosteriorTable& table) {
  if (table.rows.size() != codec.code_count())
    throw LengthMismatch("posterior table has wrong number of rows");
  Theorem1Report report;
  for (Code y = 0; y < codec.code_count(); ++y) {
    if (!table.rows[y]) continue;
    const auto& row = *table.rows[y];
    if (row.size() != codec.alphabet_size()) throw LengthMismatch("posterior row length");
    ++report.codes_checked;
    for (Symbol x = 0; x < row.size(); ++x)
      if (row[x] > 0.0 && codec.encode(x) != y) report.violations.push_back({y, x, row[x]});
  }
  return report;
}

inline Theorem1Report check_theorem1(const FiniteSource& source, const TabularCodec& codec) {
  return check_theorem1(codec, posterior_table(source, codec));
}

struct OptimalCodec {
  TabularCodec codec;
  double min_mse;
};

namespace detail {

// Decoder value for a contiguous cell [lo, hi): conditional mean, or the plain
// average of the cell's values when the cell carries no mass.
inline double cell_reconstruction(const FiniteSource& s, std::size_t lo, std::size_t hi) {
  double mass = 0.0, first = 0.0;
  for (std::size_t i = lo; i < hi; ++i) {
    mass += s.mass(i);
    first += s.mass(i) * s.value(i);
  }
  if (mass > 0.0) return first / mass;
  double avg = 0.0;
  for (std::size_t i = lo; i < hi; ++i) avg += s.value(i);
  return avg / static_cast<double>(hi - lo);
}

inline double cell_error(const FiniteSource& s, std::size_t lo, std::size_t hi, double center) {
  double err = 0.0;
  for (std::size_t i = lo; i < hi; ++i) err += s.mass(i) * (s.value(i) - center) * (s.value(i) - center);
  return err;
}

}  // namespace detail

// Exhaustive search over contiguous partitions of the ordered alphabet into
// 2^bits cells with conditional-mean decoding. Partitions are visited in
// lexicographic order of their cut positions; the first minimum wins.
inline OptimalCodec design_mse_optimal_codec(const FiniteSource& source, unsigned bits) {
  if (bits == 0 || bits >= 31) throw InvalidRate("bits must be in [1, 30]");
  const std::size_t n = source.size();
  const std::size_t m = std::size_t{1} << bits;
  if (m > n) throw InvalidRate("2^bits exceeds alphabet size");

  // cuts[k] is the first symbol of cell k+1; strictly increasing in [1, n-1].
  std::vector<std::size_t> cuts(m - 1);
  std::iota(cuts.begin(), cuts.end(), std::size_t{1});

  auto evaluate = [&](const std::vector<std::size_t>& c, std::vector<double>* centers) {
    double total = 0.0;
    std::size_t lo = 0;
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t hi = k + 1 < m ? c[k] : n;
      const double center = detail::cell_reconstruction(source, lo, hi);
      if (centers) (*centers)[k] = center;
      total += detail::cell_error(source, lo, hi, center);
      lo = hi;
    }
    return total;
  };

  std::vector<std::size_t> best_cuts = cuts;
  double best = evaluate(cuts, nullptr);
  const double tie_tolerance = 1e-12;
  for (;;) {
    // Advance to the next combination in lexicographic order.
    std::size_t k = m - 1;
    while (k > 0 && cuts[k - 1] == n - (m - 1) + (k - 1)) --k;
    if (k == 0) break;
    ++cuts[k - 1];
    for (std::size_t j = k; j < m - 1; ++j) cuts[j] = cuts[j - 1] + 1;
    const double value = evaluate(cuts, nullptr);
    if (value < best - tie_tolerance * std::max(1.0, best)) {
      best = value;
      best_cuts = cuts;
    }
  }

  std::vector<double> centers(m);
  best = evaluate(best_cuts, &centers);
  std::vector<Code> map(n);
  std::size_t cell = 0;
  for (Symbol x = 0; x < n; ++x) {
    while (cell < m - 1 && x >= best_cuts[cell]) ++cell;
    map[x] = cell;
  }
  return {TabularCodec(std::move(map), std::move(centers)), best};
}

struct MergeResult {
  TabularCodec merged;
  double mse_before;
  double mse_after;
  double entropy_before_bits;
  double entropy_after_bits;
  bool mse_equal() const { return std::abs(mse_after - mse_before) <= 1e-12 * std::max(1.0, mse_before); }
  bool entropy_lower() const { return entropy_after_bits < entropy_before_bits; }
};

struct Theorem3Report {
  bool injective = true;
  std::vector<std::pair<Code, Code>> collisions;  // (kept, merged away)
  std::optional<MergeResult> merge;
};

inline bool same_reconstruction(double a, double b) {
  return std::abs(a - b) <= 1e-12 * std::max({1.0, std::abs(a), std::abs(b)});
}

// Decoder injectivity over codes in use. A collision is resolved by the
// construction from the proof: codes sharing a reconstruction are merged into
// the lowest of them, which leaves every reconstruction unchanged.
inline Theorem3Report check_theorem3(const TabularCodec& codec, const FiniteSource& source) {
  const auto masses = code_masses(source, codec);
  const std::size_t m = codec.code_count();
  std::vector<Code> representative(m);
  std::iota(representative.begin(), representative.end(), Code{0});

  Theorem3Report report;
  for (Code a = 0; a < m; ++a) {
    if (!(masses[a] > 0.0) || representative[a] != a) continue;
    for (Code b = a + 1; b < m; ++b) {
      if (!(masses[b] > 0.0) || representative[b] != b) continue;
      if (same_reconstruction(codec.decode(a), codec.decode(b))) {
        representative[b] = a;
        report.collisions.emplace_back(a, b);
      }
    }
  }
  report.injective = report.collisions.empty();
  if (report.injective) return report;

  // Renumber surviving codes densely.
  std::vector<Code> new_index(m, 0);
  std::vector<double> decode_values;
  for (Code y = 0; y < m; ++y) {
    if (representative[y] == y) {
      new_index[y] = decode_values.size();
      decode_values.push_back(codec.decode(y));
    }
  }
  std::vector<Code> map(codec.alphabet_size());
  for (Symbol x = 0; x < map.size(); ++x) map[x] = new_index[representative[codec.encode(x)]];
  TabularCodec merged(std::move(map), std::move(decode_values));

  report.merge = MergeResult{merged,
                             codec_mse(source, codec),
                             codec_mse(source, merged),
                             code_entropy_bits(source, codec),
                             code_entropy_bits(source, merged)};
  return report;
}

// E[(X - X̂)^2] with X̂ ~ p_{X|Y}, by double enumeration within each code class.
inline double posterior_sampling_mse(const FiniteSource& source, const TabularCodec& codec) {
  const auto masses = code_masses(source, codec);
  double total = 0.0;
  for (Symbol x = 0; x < source.size(); ++x) {
    const Code y = codec.encode(x);
    for (Symbol z = 0; z < source.size(); ++z) {
      if (codec.encode(z) != y) continue;
      const double diff = source.value(x) - source.value(z);
      total += source.mass(x) * (source.mass(z) / masses[y]) * diff * diff;
    }
  }
  return total;
}

// The codec from the worked example: f(x) = round(x / 3) on {0..5}, decoded
// by cell means (1, 4).
inline TabularCodec example_round_third_codec() {
  return TabularCodec({0, 0, 0, 1, 1, 1}, {1.0, 4.0});
}

// Random instances for property checks: n symbols with Dirichlet(1) masses on
// sorted distinct values, and a random map into m codes.
inline FiniteSource random_source(std::size_t n, Rng& rng) {
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> pmf(n);
  double total = 0.0;
  for (double& p : pmf) total += (p = expo(rng));
  for (double& p : pmf) p /= total;
  // Renormalize so the sum is exactly 1 up to one ulp of each term.
  const double residual = 1.0 - std::accumulate(pmf.begin(), pmf.end(), 0.0);
  pmf.back() += residual;
  std::uniform_real_distribution<double> gap(0.1, 2.0);
  std::vector<double> values(n);
  double v = std::uniform_real_distribution<double>(-5.0, 0.0)(rng);
  for (double& x : values) x = (v += gap(rng));
  return {std::move(pmf), std::move(values)};
}

inline TabularCodec random_codec(std::size_t n, std::size_t m, Rng& rng) {
  std::uniform_int_distribution<Code> code(0, m - 1);
  std::normal_distribution<double> value(0.0, 3.0);
  std::vector<Code> map(n);
  for (Code& y : map) y = code(rng);
  std::vector<double> decode(m);
  for (double& v : decode) v = value(rng);
  return {std::move(map), std::move(decode)};
}

}  // namespace idemlab::discrete
