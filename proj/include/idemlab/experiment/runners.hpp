#pragma once

// The five canonical experiments. Each runner computes everything in
// memory for one seed and appends checks and result files to a SeedReport.

#include "idemlab/bitstream.hpp"
#include "idemlab/cell_mean.hpp"
#include "idemlab/diffusion.hpp"
#include "idemlab/discrete_lab.hpp"
#include "idemlab/experiment/config.hpp"
#include "idemlab/inversion.hpp"
#include "idemlab/metrics.hpp"
#include "idemlab/parallel.hpp"
#include "idemlab/random.hpp"
#include "idemlab/transform_codec.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace idemlab {

using config::Json;

// Purpose tags for derive_stream. Per-sample streams use the sample index as
// the task, so results do not depend on scheduling.
namespace stream {
inline constexpr std::uint32_t train = 1;
inline constexpr std::uint32_t evaluation = 2;
inline constexpr std::uint32_t reference = 3;
inline constexpr std::uint32_t perturbation = 4;
inline constexpr std::uint32_t invert = 100;  // + step index
inline constexpr std::uint32_t grid = 200;    // + grid index
inline constexpr std::uint32_t diversity = 300;
inline constexpr std::uint32_t equivalence = 301;
inline constexpr std::uint32_t trajectory = 302;
inline constexpr std::uint32_t adaptive = 303;
inline constexpr std::uint32_t audit = 400;
inline constexpr std::uint32_t discrete = 500;  // + sub-experiment
}  // namespace stream

struct Check {
  std::string name;
  std::uint64_t seed = 0;
  bool passed = false;
  Json witness;
};

struct RunOutput {
  std::vector<Check> checks;
  std::vector<std::pair<std::string, std::string>> files;  // relative path, content
  Json results = Json::object();                         // per-seed headline numbers

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
  }
};

class SeedReport {
 public:
  SeedReport(RunOutput& out, std::uint64_t seed) : out_(out), seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  void check(std::string name, bool passed, Json witness = Json::object()) {
    out_.checks.push_back({std::move(name), seed_, passed, std::move(witness)});
  }

  void file(const std::string& name, std::string content) {
    out_.files.emplace_back("seed-" + std::to_string(seed_) + "/" + name, std::move(content));
  }

  void result(const std::string& key, Json value) { out_.results["seed-" + std::to_string(seed_)][key] = std::move(value); }

 private:
  RunOutput& out_;
  std::uint64_t seed_;
};

namespace run_detail {

inline std::string fmt(double v) { return format_double(v); }

inline std::string step_tag(double step) { return "[step=" + fmt(step) + "]"; }

inline DiffusionModel make_model(const ExperimentConfig& cfg, std::uint64_t seed) {
  std::optional<ScorePerturbation> p;
  if (cfg.model.perturbation > 0.0) {
    Rng r = derive_stream(seed, 0, stream::perturbation);
    p.emplace(cfg.source->dim(), cfg.model.perturbation, r(), static_cast<int>(cfg.model.features));
  }
  return DiffusionModel(*cfg.source, cfg.make_schedule(), p);
}

inline std::vector<Vector> draw(const GmmSource& src, std::size_t n, std::uint64_t seed, std::uint32_t purpose) {
  Rng rng = derive_stream(seed, 0, purpose);
  return src.sample(n, rng);
}

inline TransformCodec fit_codec(const ExperimentConfig& cfg, std::span<const Vector> train, double step,
                                double gamma) {
  return TransformCodec::fit(train, {Vector::Constant(1, step), Companding(gamma), cfg.codec.symbol_range});
}

inline double max_abs(std::span<const Vector> xs) {
  double m = 0.0;
  for (const auto& x : xs) m = std::max(m, x.cwiseAbs().maxCoeff());
  return m;
}

inline std::span<const Vector> head(const std::vector<Vector>& v, std::size_t n) { return {v.data(), n}; }

inline std::vector<InversionResult> invert_all(const DiffusionModel& model, const TransformCodec& codec,
                                               const std::vector<Symbols>& ys, const InversionConfig& icfg,
                                               std::uint64_t seed, std::uint32_t purpose, unsigned threads) {
  std::vector<InversionResult> out(ys.size());
  parallel_for(ys.size(), [&](std::size_t i) {
    Rng rng = derive_stream(seed, i, purpose);
    out[i] = invert(model, codec, ys[i], icfg, rng);
  }, threads);
  return out;
}

inline std::vector<Vector> reconstructions(const std::vector<InversionResult>& rs) {
  std::vector<Vector> out;
  out.reserve(rs.size());
  for (const auto& r : rs) out.push_back(r.x_hat);
  return out;
}

// Non-increasing, except that one adjacent pair may rise by at most
// `tolerance` relative to its predecessor.
inline bool non_increasing_with_one_slack(const std::vector<double>& v, double tolerance, Json& witness) {
  std::size_t rises = 0;
  bool within = true;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[i - 1]) {
      ++rises;
      if (v[i] > v[i - 1] * (1.0 + tolerance)) within = false;
    }
  }
  witness["rises"] = rises;
  witness["tolerance"] = tolerance;
  return rises == 0 || (rises == 1 && within);
}

}  // namespace run_detail

// ---------------------------------------------------------------------------

inline void run_discrete_verify(const ExperimentConfig& cfg, SeedReport& rep) {
  using namespace discrete;
  const auto& spec = cfg.discrete;
  const std::uint64_t seed = rep.seed();
  const FiniteSource example = FiniteSource::uniform(6);
  const TabularCodec example_codec = example_round_third_codec();
  Json results = Json::object();

  {
    const auto r = check_theorem1(example, example_codec);
    rep.check("posterior_support.example", r.passed(), {{"codes_checked", r.codes_checked}});
  }

  // Random pairs, plus a tampered posterior per pair that must be caught.
  {
    std::size_t failures = 0, codes = 0, tampered = 0, detected = 0;
    for (std::size_t i = 0; i < spec.random_pairs; ++i) {
      Rng rng = derive_stream(seed, i, stream::discrete + 0);
      const std::size_t n = 2 + rng() % (spec.max_alphabet - 1);
      const std::size_t m = 1 + rng() % spec.max_codes;
      const FiniteSource src = random_source(n, rng);
      const TabularCodec codec = random_codec(n, m, rng);
      PosteriorTable table = posterior_table(src, codec);
      const auto r = check_theorem1(codec, table);
      codes += r.codes_checked;
      if (!r.passed()) ++failures;
      for (Code y = 0; y < m; ++y) {
        if (!table.rows[y]) continue;
        for (Symbol x = 0; x < n; ++x) {
          if (codec.encode(x) == y) continue;
          (*table.rows[y])[x] = 0.5;
          ++tampered;
          if (!check_theorem1(codec, table).passed()) ++detected;
          y = m;  // one tamper per pair
          break;
        }
      }
    }
    rep.check("posterior_support.random", failures == 0,
              {{"pairs", spec.random_pairs}, {"codes_checked", codes}, {"failures", failures}});
    rep.check("posterior_support.detects_leak", detected == tampered && tampered > 0,
              {{"tampered", tampered}, {"detected", detected}});
  }

  std::ostringstream tv_csv;
  tv_csv << "instance,code,support,samples,tv,bound\n";
  {
    double worst = 0.0;
    Json per_code = Json::array();
    for (Code y = 0; y < example_codec.code_count(); ++y) {
      Rng rng = derive_stream(seed, y, stream::discrete + 1);
      const auto draws = rejection_sample_constrained(example, example_codec, y, spec.rejection_samples, rng);
      const double tv = tv_distance(empirical_pmf(draws, example.size()), exact_posterior(example, example_codec, y));
      worst = std::max(worst, tv);
      per_code.push_back({{"code", y}, {"tv", tv}});
      tv_csv << "example," << y << ",3," << spec.rejection_samples << ',' << run_detail::fmt(tv) << ",0.02\n";
    }
    rep.check("rejection_sampling.example", worst < 0.02, {{"max_tv", worst}, {"bound", 0.02}, {"codes", per_code}});
  }
  {
    std::size_t violations = 0;
    double worst_ratio = 0.0;
    for (std::size_t i = 0; i < spec.statistical_instances; ++i) {
      Rng rng = derive_stream(seed, i, stream::discrete + 2);
      const std::size_t n = 3 + rng() % (spec.max_alphabet - 2);
      const std::size_t m = 1 + rng() % spec.max_codes;
      const FiniteSource src = random_source(n, rng);
      const TabularCodec codec = random_codec(n, m, rng);
      const auto masses = code_masses(src, codec);
      const Code y = static_cast<Code>(std::max_element(masses.begin(), masses.end()) - masses.begin());
      const auto post = exact_posterior(src, codec, y);
      const auto support = static_cast<std::size_t>(std::count_if(post.begin(), post.end(), [](double p) { return p > 0; }));
      const auto draws = rejection_sample_constrained(src, codec, y, spec.rejection_samples, rng);
      const double tv = tv_distance(empirical_pmf(draws, n), post);
      const double bound = 3.0 * std::sqrt(static_cast<double>(support) / static_cast<double>(spec.rejection_samples));
      if (!(tv < bound)) ++violations;
      worst_ratio = std::max(worst_ratio, tv / bound);
      tv_csv << i << ',' << y << ',' << support << ',' << spec.rejection_samples << ',' << run_detail::fmt(tv) << ','
             << run_detail::fmt(bound) << '\n';
    }
    rep.check("rejection_sampling.random", violations == 0,
              {{"instances", spec.statistical_instances}, {"violations", violations}, {"max_tv_over_bound", worst_ratio}});
  }
  rep.file("rejection_tv.csv", tv_csv.str());

  {
    const double psm = posterior_sampling_mse(example, example_codec);
    const OptimalCodec opt = design_mse_optimal_codec(example, 1);
    const bool ok = std::abs(psm - 4.0 / 3.0) <= 1e-12 && std::abs(psm - 2.0 * opt.min_mse) <= 1e-12;
    rep.check("posterior_mse_doubling.example", ok, {{"posterior_sampling_mse", psm}, {"optimal_mse", opt.min_mse}});
    results["example_posterior_sampling_mse"] = psm;
  }

  {
    std::size_t bound_violations = 0, non_injective = 0, merge_failures = 0, merges = 0;
    double worst_ratio = 0.0;
    for (std::size_t i = 0; i < spec.optimal_sources; ++i) {
      Rng rng = derive_stream(seed, i, stream::discrete + 3);
      const std::size_t n = 2 + rng() % (spec.max_alphabet - 1);
      const unsigned bits = (n >= 4 && rng() % 2 == 1) ? 2 : 1;
      const FiniteSource src = random_source(n, rng);
      const OptimalCodec opt = design_mse_optimal_codec(src, bits);
      const double psm = posterior_sampling_mse(src, opt.codec);
      if (psm > 2.0 * opt.min_mse + 1e-12) ++bound_violations;
      if (opt.min_mse > 0.0) worst_ratio = std::max(worst_ratio, psm / opt.min_mse);
      if (!check_theorem3(opt.codec, src).injective) ++non_injective;

      // Force a collision between the first two codes, then merge.
      auto values = opt.codec.decode_values();
      values[1] = values[0];
      const TabularCodec collided(opt.codec.encode_map(), values);
      const auto merged = check_theorem3(collided, src);
      ++merges;
      if (!merged.merge || !merged.merge->mse_equal() || !merged.merge->entropy_lower()) ++merge_failures;
    }
    rep.check("posterior_mse_doubling.random", bound_violations == 0,
              {{"sources", spec.optimal_sources}, {"violations", bound_violations},
               {"max_ratio_to_optimal", worst_ratio}});
    rep.check("decoder_injectivity.optimal_codecs", non_injective == 0,
              {{"sources", spec.optimal_sources}, {"non_injective", non_injective}});

    const TabularCodec redundant({0, 0, 1, 1, 2, 2}, {1.0, 4.0, 4.0});
    const auto ex = check_theorem3(redundant, example);
    const bool ex_ok = ex.merge && ex.merge->mse_equal() && ex.merge->entropy_lower();
    Json w = {{"random_merges", merges}, {"random_failures", merge_failures}};
    if (ex.merge) {
      w["example_mse"] = ex.merge->mse_before;
      w["example_entropy_before_bits"] = ex.merge->entropy_before_bits;
      w["example_entropy_after_bits"] = ex.merge->entropy_after_bits;
    }
    rep.check("decoder_injectivity.merge", ex_ok && merge_failures == 0, w);
  }
  rep.file("discrete_verify.json", results.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

inline void run_rd_sweep(const ExperimentConfig& cfg, SeedReport& rep) {
  using namespace run_detail;
  const std::uint64_t seed = rep.seed();
  const DiffusionModel model = make_model(cfg, seed);
  const GmmSource& src = model.source();
  const auto& ev = cfg.evaluation;
  const auto train = draw(src, cfg.codec.train_samples, seed, stream::train);
  const auto xs = draw(src, ev.pool(), seed, stream::evaluation);
  const auto ref = draw(src, ev.reference_samples, seed, stream::reference);
  const Moments ref_moments = fit_moments(ref);
  const double peak = ev.peak.value_or(max_abs(xs));
  const auto d = static_cast<std::size_t>(src.dim());
  constexpr double kMseFactor = 2.2, kPsnrGap = 3.01, kDivergenceFactor = 0.5;

  RDCurve base{"base", {}}, inv{"inversion", {}};
  std::ostringstream points_csv;
  points_csv << "step,zeta,bpp,base_mse,inversion_mse,base_psnr,inversion_psnr,base_divergence,"
                "inversion_divergence,satisfaction,mean_attempts\n";
  Json rows = Json::array();
  std::vector<double> rates;

  for (std::size_t k = 0; k < cfg.codec.steps.size(); ++k) {
    const double step = cfg.codec.steps[k];
    const TransformCodec codec = fit_codec(cfg, train, step, cfg.codec.companding);
    std::vector<Symbols> encoded(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) encoded[i] = codec.encode(xs[i]);
    const Bitstream bits = serialize_batch(codec, encoded);
    const std::vector<Symbols> ys = deserialize_batch(bits, xs.size());
    const double bpp = rate_bpp(bits, xs.size() * d);
    rates.push_back(bpp);
    rep.check("rd.bitstream_shared" + step_tag(step), ys == encoded,
              {{"bytes", bits.bytes.size()}, {"bpp", bpp}});

    std::vector<Vector> base_x;
    base_x.reserve(ys.size());
    for (const auto& y : ys) base_x.push_back(codec.decode(y));
    const auto results = invert_all(model, codec, ys, cfg.inversion.at(k), seed, stream::invert + k, cfg.threads);
    const auto inv_x = reconstructions(results);

    const double base_mse = mse(head(xs, ev.samples), head(base_x, ev.samples));
    const double inv_mse = mse(head(xs, ev.samples), head(inv_x, ev.samples));
    const double base_fd = frechet_distance(fit_moments(head(base_x, ev.divergence_samples)), ref_moments);
    const double inv_fd = frechet_distance(fit_moments(head(inv_x, ev.divergence_samples)), ref_moments);
    const double base_psnr = psnr(base_mse, peak), inv_psnr = psnr(inv_mse, peak);
    std::size_t satisfied = 0;
    double attempts = 0.0;
    for (const auto& r : results) {
      satisfied += r.satisfied();
      attempts += r.attempts;
    }
    const double satisfaction = static_cast<double>(satisfied) / static_cast<double>(results.size());
    attempts /= static_cast<double>(results.size());

    base.points.push_back({bpp, base_mse, base_psnr, base_fd});
    inv.points.push_back({bpp, inv_mse, inv_psnr, inv_fd});
    points_csv << fmt(step) << ',' << fmt(cfg.inversion.zeta[k]) << ',' << fmt(bpp) << ',' << fmt(base_mse) << ','
               << fmt(inv_mse) << ',' << fmt(base_psnr) << ',' << fmt(inv_psnr) << ',' << fmt(base_fd) << ','
               << fmt(inv_fd) << ',' << fmt(satisfaction) << ',' << fmt(attempts) << '\n';
    rows.push_back({{"step", step}, {"zeta", cfg.inversion.zeta[k]}, {"bpp", bpp}, {"base_mse", base_mse},
                    {"inversion_mse", inv_mse}, {"mse_ratio", inv_mse / base_mse}, {"base_psnr", base_psnr},
                    {"inversion_psnr", inv_psnr}, {"base_divergence", base_fd}, {"inversion_divergence", inv_fd},
                    {"satisfaction", satisfaction}, {"mean_attempts", attempts}});

    rep.check("rd.mse_within_factor" + step_tag(step), inv_mse <= kMseFactor * base_mse,
              {{"ratio", inv_mse / base_mse}, {"limit", kMseFactor}});
    rep.check("rd.psnr_gap" + step_tag(step), base_psnr - inv_psnr <= kPsnrGap,
              {{"gap_db", base_psnr - inv_psnr}, {"limit_db", kPsnrGap}});
    rep.check("rd.divergence_reduced" + step_tag(step), inv_fd < kDivergenceFactor * base_fd,
              {{"ratio", inv_fd / base_fd}, {"limit", kDivergenceFactor}});
  }

  bool rate_ordered = true;
  for (std::size_t k = 1; k < rates.size(); ++k) rate_ordered = rate_ordered && rates[k] < rates[k - 1];
  rep.check("rd.rate_decreases_with_step", rate_ordered, {{"bpp", rates}});

  std::reverse(base.points.begin(), base.points.end());
  std::reverse(inv.points.begin(), inv.points.end());
  std::ostringstream curves;
  const std::vector<RDCurve> pair{base, inv};
  write_rd_csv(curves, pair);
  rep.file("rd_curves.csv", curves.str());
  rep.file("rd_points.csv", points_csv.str());

  Json summary = {{"peak", peak}, {"points", rows}};
  if (rate_ordered) {
    try {
      summary["bd_psnr_db"] = bd_metric(base, inv, QualityAxis::psnr);
      summary["bd_divergence"] = bd_metric(base, inv, QualityAxis::divergence);
    } catch (const Error& e) {
      summary["bd_error"] = e.what();
    }
  }
  rep.result("peak", peak);
  rep.file("rd_sweep.json", summary.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

inline void run_invert(const ExperimentConfig& cfg, SeedReport& rep) {
  using namespace run_detail;
  const std::uint64_t seed = rep.seed();
  const auto& spec = cfg.invert;
  const DiffusionModel model = make_model(cfg, seed);
  const GmmSource& src = model.source();
  const double step = cfg.codec.steps.front();
  const auto train = draw(src, cfg.codec.train_samples, seed, stream::train);
  const TransformCodec codec = fit_codec(cfg, train, step, cfg.codec.companding);
  const std::size_t n_targets = std::max({spec.grid_samples, spec.trajectory_runs, spec.adaptive_samples});
  const auto xs = draw(src, n_targets, seed, stream::evaluation);
  std::vector<Symbols> ys;
  for (const auto& x : xs) ys.push_back(codec.encode(x));
  InversionConfig base_cfg = cfg.inversion.at(0);
  base_cfg.adaptive.reset();
  Json summary = Json::object();

  // Constraint residual along the zeta grid, up to the first divergence.
  {
    std::ostringstream csv;
    csv << "zeta,mean_y_residual,mean_recompression_mse,satisfaction,status\n";
    std::vector<double> residuals;
    Json rows = Json::array();
    for (std::size_t j = 0; j < spec.zeta_grid.size(); ++j) {
      InversionConfig c = base_cfg;
      c.zeta = spec.zeta_grid[j];
      std::vector<InversionResult> rs(spec.grid_samples);
      std::vector<char> diverged(spec.grid_samples, 0);
      parallel_for(spec.grid_samples, [&](std::size_t i) {
        Rng rng = derive_stream(seed, i, stream::grid + static_cast<std::uint32_t>(j));
        try {
          rs[i] = dps_invert(model, codec, ys[i], c, rng);
        } catch (const NonFinite&) {
          diverged[i] = 1;
        }
      }, cfg.threads);
      if (std::any_of(diverged.begin(), diverged.end(), [](char v) { return v != 0; })) {
        csv << fmt(c.zeta) << ",,,,diverged\n";
        rows.push_back({{"zeta", c.zeta}, {"status", "diverged"}});
        break;
      }
      double yres = 0.0, rres = 0.0, sat = 0.0;
      for (const auto& r : rs) {
        yres += r.y_residual;
        rres += r.recompression_mse;
        sat += r.satisfied();
      }
      const double n = static_cast<double>(rs.size());
      residuals.push_back(rres / n);
      csv << fmt(c.zeta) << ',' << fmt(yres / n) << ',' << fmt(rres / n) << ',' << fmt(sat / n) << ",ok\n";
      rows.push_back({{"zeta", c.zeta}, {"mean_y_residual", yres / n}, {"mean_recompression_mse", rres / n},
                      {"satisfaction", sat / n}, {"status", "ok"}});
    }
    Json w = {{"residuals", residuals}, {"evaluated", residuals.size()}};
    const bool monotone = non_increasing_with_one_slack(residuals, 0.05, w);
    rep.check("invert.residual_non_increasing_in_zeta", monotone && residuals.size() >= 2, w);
    rep.file("zeta_grid.csv", csv.str());
    summary["zeta_grid"] = rows;
  }

  // Diversity of seeded inversions of a single y.
  {
    const Symbols& y = ys.front();
    std::vector<InversionResult> rs(spec.diversity_runs);
    parallel_for(spec.diversity_runs, [&](std::size_t r) {
      Rng rng = derive_stream(seed, r, stream::diversity);
      rs[r] = invert(model, codec, y, cfg.inversion.at(0), rng);
    }, cfg.threads);
    double min_pair = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < rs.size(); ++a)
      for (std::size_t b = a + 1; b < rs.size(); ++b) min_pair = std::min(min_pair, (rs[a].x_hat - rs[b].x_hat).norm());
    Vector mean = Vector::Zero(src.dim()), sq = Vector::Zero(src.dim());
    for (const auto& r : rs) mean += r.x_hat;
    mean /= static_cast<double>(rs.size());
    for (const auto& r : rs) sq += (r.x_hat - mean).cwiseAbs2();
    const double min_std = (sq / static_cast<double>(rs.size() - 1)).cwiseSqrt().minCoeff();
    std::size_t sat = 0;
    std::ostringstream csv;
    csv << "run,satisfied,recompression_mse";
    for (Eigen::Index i = 0; i < src.dim(); ++i) csv << ",x" << i;
    csv << '\n';
    for (std::size_t r = 0; r < rs.size(); ++r) {
      sat += rs[r].satisfied();
      csv << r << ',' << (rs[r].satisfied() ? 1 : 0) << ',' << fmt(rs[r].recompression_mse);
      for (Eigen::Index i = 0; i < src.dim(); ++i) csv << ',' << fmt(rs[r].x_hat[i]);
      csv << '\n';
    }
    const double rate = static_cast<double>(sat) / static_cast<double>(rs.size());
    rep.check("invert.diversity_distinct", min_pair > 0.0, {{"min_pairwise_distance", min_pair}});
    rep.check("invert.diversity_spread", min_std > 0.0, {{"min_coordinate_std", min_std}});
    rep.check("invert.diversity_satisfaction", rate >= 0.9, {{"satisfaction", rate}, {"limit", 0.9}});
    rep.file("diversity.csv", csv.str());
    summary["diversity"] = {{"runs", rs.size()}, {"target", y.indices}};
  }

  // zeta = 0 reproduces the unconditional sampler bit for bit.
  {
    std::size_t mismatches = 0;
    for (std::size_t r = 0; r < spec.trajectory_runs; ++r) {
      Rng a = derive_stream(seed, r, stream::trajectory), b = a;
      InversionConfig zero = base_cfg;
      zero.zeta = 0.0;
      if (dps_invert(model, codec, ys[r], zero, a).x_hat != sample_chain(model, b)) ++mismatches;
    }
    rep.check("invert.zero_zeta_is_unconditional", mismatches == 0,
              {{"runs", spec.trajectory_runs}, {"mismatches", mismatches}});
  }

  // Domain equivalence, defined for the uncompanded lattice only.
  if (!codec.companding().enabled()) {
    Rng rng = derive_stream(seed, 0, stream::equivalence);
    const auto& sched = model.schedule();
    double worst = 0.0;
    std::size_t zero_states = 0;
    bool zero_consistent = true;
    for (std::size_t s = 0; s < spec.equivalence_states; ++s) {
      const int t = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(model.steps()));
      const double ab = sched.alpha_bar(t);
      const Vector x = std::sqrt(ab) * src.sample(rng) + std::sqrt(1.0 - ab) * standard_normal(src.dim(), rng);
      const Symbols& y = ys[s % ys.size()];
      const Vector gy = guidance_gradient(model, codec, x, t, y, ConstraintDomain::y);
      const Vector gx = guidance_gradient(model, codec, x, t, y, ConstraintDomain::x);
      const Vector expect = step * step * gy;
      if (expect.norm() == 0.0) {
        ++zero_states;
        zero_consistent = zero_consistent && gx.norm() == 0.0;
        continue;
      }
      worst = std::max(worst, (gx - expect).norm() / expect.norm());
    }
    rep.check("invert.gradient_ratio_is_step_squared", worst < 1e-9 && zero_consistent,
              {{"states", spec.equivalence_states}, {"max_relative_error", worst}, {"zero_states", zero_states}});

    double max_diff = 0.0;
    std::size_t symbol_mismatch = 0;
    for (std::size_t r = 0; r < spec.trajectory_runs; ++r) {
      InversionConfig cy = base_cfg, cx = base_cfg;
      cy.domain = ConstraintDomain::y;
      cy.normalize_gradient = cx.normalize_gradient = false;
      cx.domain = ConstraintDomain::x;
      cx.zeta = cy.zeta / (step * step);
      Rng a = derive_stream(seed, r, stream::trajectory + 1), b = a;
      const auto ry = dps_invert(model, codec, ys[r], cy, a);
      const auto rx = dps_invert(model, codec, ys[r], cx, b);
      max_diff = std::max(max_diff, (ry.x_hat - rx.x_hat).cwiseAbs().maxCoeff() / std::max(1.0, ry.x_hat.norm()));
      if (codec.encode(ry.x_hat) != codec.encode(rx.x_hat)) ++symbol_mismatch;
    }
    rep.check("invert.domains_agree_with_rescaled_zeta", max_diff <= 1e-9 && symbol_mismatch == 0,
              {{"runs", spec.trajectory_runs}, {"max_relative_difference", max_diff},
               {"symbol_mismatches", symbol_mismatch}});
  } else {
    summary["domain_equivalence"] = "not exercised: companding is on";
  }

  if (cfg.inversion.adaptive) {
    const AdaptivePolicy& policy = *cfg.inversion.adaptive;
    std::vector<InversionResult> first(spec.adaptive_samples), last(spec.adaptive_samples);
    parallel_for(spec.adaptive_samples, [&](std::size_t i) {
      Rng rng = derive_stream(seed, i, stream::adaptive), probe = rng;
      first[i] = dps_invert(model, codec, ys[i], base_cfg, probe);
      last[i] = adaptive_zeta_invert(model, codec, ys[i], cfg.inversion.at(0), rng);
    }, cfg.threads);
    bool budget_ok = true, accepted_ok = true;
    std::size_t accepted = 0;
    std::map<int, std::size_t> histogram;
    for (std::size_t i = 0; i < last.size(); ++i) {
      ++histogram[last[i].attempts];
      budget_ok = budget_ok && last[i].attempts >= 1 && last[i].attempts <= policy.max_retries + 1;
      if (last[i].recompression_mse <= policy.threshold) {
        ++accepted;
        accepted_ok = accepted_ok && last[i].recompression_mse <= first[i].recompression_mse;
      } else {
        budget_ok = budget_ok && last[i].attempts == policy.max_retries + 1;
      }
    }
    Json hist = Json::object();
    for (const auto& [a, c] : histogram) hist[std::to_string(a)] = c;
    rep.check("invert.adaptive_respects_budget", budget_ok, {{"attempt_histogram", hist}});
    rep.check("invert.adaptive_accepts_lower_residual", accepted_ok,
              {{"accepted", accepted}, {"samples", spec.adaptive_samples}});
  }
  rep.file("invert.json", summary.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

inline void run_pd_sweep(const ExperimentConfig& cfg, SeedReport& rep) {
  using namespace run_detail;
  const std::uint64_t seed = rep.seed();
  const DiffusionModel model = make_model(cfg, seed);
  const GmmSource& src = model.source();
  const auto& ev = cfg.evaluation;
  const double step = cfg.codec.steps.front();
  const auto train = draw(src, cfg.codec.train_samples, seed, stream::train);
  const TransformCodec codec = fit_codec(cfg, train, step, cfg.codec.companding);
  const auto xs = draw(src, ev.pool(), seed, stream::evaluation);
  const auto ref = draw(src, ev.reference_samples, seed, stream::reference);
  const Moments ref_moments = fit_moments(ref);
  const double peak = ev.peak.value_or(max_abs(xs));

  std::vector<Symbols> ys;
  for (const auto& x : xs) ys.push_back(codec.encode(x));
  const double bpp = rate_bpp(serialize_batch(codec, ys), xs.size() * static_cast<std::size_t>(src.dim()));

  std::vector<Vector> lattice(ys.size()), anchor(ys.size());
  for (std::size_t i = 0; i < ys.size(); ++i) lattice[i] = codec.decode(ys[i]);
  if (cfg.pd.anchor == PdAnchor::posterior_mean) {
    const CellMeanDecoder cell(src, codec);
    parallel_for(ys.size(), [&](std::size_t i) { anchor[i] = cell.decode(ys[i]); }, cfg.threads);
  } else {
    anchor = lattice;
  }
  const auto x_p = reconstructions(invert_all(model, codec, ys, cfg.inversion.at(0), seed, stream::invert, cfg.threads));

  auto measure = [&](const std::vector<Vector>& rec) {
    const double m = mse(head(xs, ev.samples), head(rec, ev.samples));
    return RDPoint{bpp, m, psnr(m, peak), frechet_distance(fit_moments(head(rec, ev.divergence_samples)), ref_moments)};
  };
  const RDPoint anchor_pt = measure(anchor), inv_pt = measure(x_p), lattice_pt = measure(lattice);

  std::ostringstream csv;
  csv << "alpha,bpp,mse,psnr,divergence\n";
  std::vector<RDPoint> sweep;
  bool convex_ok = true;
  for (double alpha : cfg.pd.alphas) {
    std::vector<Vector> blend(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) blend[i] = convex_interpolate(x_p[i], anchor[i], alpha);
    const RDPoint p = measure(blend);
    sweep.push_back(p);
    convex_ok = convex_ok && p.mse <= alpha * inv_pt.mse + (1 - alpha) * anchor_pt.mse + 1e-12;
    csv << fmt(alpha) << ',' << fmt(p.bpp) << ',' << fmt(p.mse) << ',' << fmt(p.psnr) << ',' << fmt(p.divergence) << '\n';
  }

  std::vector<double> mses, divs;
  for (const auto& p : sweep) {
    mses.push_back(p.mse);
    divs.push_back(p.divergence);
  }
  bool mse_mono = true, div_mono = true;
  for (std::size_t i = 1; i < sweep.size(); ++i) {
    mse_mono = mse_mono && mses[i] >= mses[i - 1];
    div_mono = div_mono && divs[i] <= divs[i - 1];
  }
  auto close = [](const RDPoint& a, const RDPoint& b) {
    return std::abs(a.mse - b.mse) <= 1e-9 && std::abs(a.divergence - b.divergence) <= 1e-9;
  };
  rep.check("pd.mse_decreases_toward_anchor", mse_mono, {{"alphas", cfg.pd.alphas}, {"mse", mses}});
  rep.check("pd.divergence_decreases_toward_inversion", div_mono, {{"alphas", cfg.pd.alphas}, {"divergence", divs}});
  rep.check("pd.endpoint_anchor", close(sweep.front(), anchor_pt),
            {{"sweep_mse", sweep.front().mse}, {"standalone_mse", anchor_pt.mse},
             {"sweep_divergence", sweep.front().divergence}, {"standalone_divergence", anchor_pt.divergence}});
  rep.check("pd.endpoint_inversion", close(sweep.back(), inv_pt),
            {{"sweep_mse", sweep.back().mse}, {"standalone_mse", inv_pt.mse},
             {"sweep_divergence", sweep.back().divergence}, {"standalone_divergence", inv_pt.divergence}});
  rep.check("pd.mse_below_chord", convex_ok);

  rep.file("pd_sweep.csv", csv.str());
  const Json summary = {
      {"peak", peak},
      {"bpp", bpp},
      {"anchor", cfg.pd.anchor == PdAnchor::posterior_mean ? "posterior_mean" : "lattice"},
      {"anchor_point", {{"mse", anchor_pt.mse}, {"divergence", anchor_pt.divergence}}},
      {"inversion_point", {{"mse", inv_pt.mse}, {"divergence", inv_pt.divergence}}},
      {"lattice_point", {{"mse", lattice_pt.mse}, {"divergence", lattice_pt.divergence}}}};
  rep.result("peak", peak);
  rep.file("pd_sweep.json", summary.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

inline void run_idem_audit(const ExperimentConfig& cfg, SeedReport& rep) {
  using namespace run_detail;
  const std::uint64_t seed = rep.seed();
  const DiffusionModel model = make_model(cfg, seed);
  const GmmSource& src = model.source();
  const double step = cfg.codec.steps.front();
  const auto train = draw(src, cfg.codec.train_samples, seed, stream::train);
  const auto xs = draw(src, cfg.evaluation.samples, seed, stream::evaluation);
  const TransformCodec companded = fit_codec(cfg, train, step, cfg.codec.companding);
  const TransformCodec lattice = fit_codec(cfg, train, step, 1.0);

  std::vector<Symbols> ys;
  for (const auto& x : xs) ys.push_back(companded.encode(x));
  const auto inv = reconstructions(invert_all(model, companded, ys, cfg.inversion.at(0), seed, stream::audit, cfg.threads));
  const AugmentationReport on = augmented_recompression(companded, [&](const Symbols& y, std::size_t i) {
    if (y != ys[i]) throw InvalidArgument("idem-audit: symbol mismatch");
    return inv[i];
  }, xs);

  std::size_t calls = 0;
  const AugmentationReport off = augmented_recompression(lattice, [&](const Symbols&, std::size_t i) {
    ++calls;
    return xs[i];
  }, xs);

  std::size_t fixed = 0, drifted = 0;
  for (const auto& x : xs) {
    const Symbols s = lattice.encode(x);
    fixed += lattice.encode(lattice.decode(s)) == s;
    const Symbols c = companded.encode(x);
    drifted += companded.encode(companded.decode(c)) != c;
  }

  rep.check("audit.augmented_below_base", on.augmented < on.base,
            {{"base", on.base}, {"augmented", on.augmented}, {"satisfied", on.satisfied}, {"samples", on.samples}});
  rep.check("audit.uncompanded_is_exactly_zero", off.base == 0.0 && off.augmented == 0.0 && calls == 0,
            {{"base", off.base}, {"augmented", off.augmented}, {"inverter_calls", calls}});
  rep.check("audit.lattice_fixed_point", fixed == xs.size(), {{"fixed", fixed}, {"samples", xs.size()}});

  std::ostringstream csv;
  csv << "codec,gamma,step,base,augmented,satisfied,samples,drifted\n";
  csv << "companded," << fmt(cfg.codec.companding) << ',' << fmt(step) << ',' << fmt(on.base) << ','
      << fmt(on.augmented) << ',' << on.satisfied << ',' << on.samples << ',' << drifted << '\n';
  csv << "lattice,1," << fmt(step) << ',' << fmt(off.base) << ',' << fmt(off.augmented) << ',' << off.satisfied << ','
      << off.samples << ',' << (xs.size() - fixed) << '\n';
  rep.file("idem_audit.csv", csv.str());
  const Json summary = {{"companded", {{"base", on.base}, {"augmented", on.augmented}, {"drift_fraction",
                                      static_cast<double>(drifted) / static_cast<double>(xs.size())}}},
                        {"lattice", {{"base", off.base}, {"augmented", off.augmented}}}};
  rep.file("idem_audit.json", summary.dump(2) + "\n");
}

}  // namespace idemlab
