#pragma once

#include "idemlab/diffusion.hpp"
#include "idemlab/experiment/config_reader.hpp"
#include "idemlab/inversion.hpp"
#include "idemlab/presets.hpp"

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace idemlab {

enum class ExperimentKind { discrete_verify, rd_sweep, invert, pd_sweep, idem_audit };

inline const char* kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::discrete_verify: return "discrete-verify";
    case ExperimentKind::rd_sweep: return "rd-sweep";
    case ExperimentKind::invert: return "invert";
    case ExperimentKind::pd_sweep: return "pd-sweep";
    case ExperimentKind::idem_audit: return "idem-audit";
  }
  return "?";
}

enum class PdAnchor { posterior_mean, lattice };

struct DiscreteSpec {
  std::size_t random_pairs = 100;
  std::size_t max_alphabet = 12;
  std::size_t max_codes = 4;
  std::size_t rejection_samples = 60000;
  std::size_t statistical_instances = 20;
  std::size_t optimal_sources = 100;
};

struct ScheduleSpec {
  int steps = 200;
  double beta_start = 1e-4;
  double beta_end = 0.07;
};

struct ModelSpec {
  double perturbation = 0.0;
  std::size_t features = 16;
};

struct CodecSpec {
  std::vector<double> steps;
  double companding = 1.0;
  int symbol_range = 0;
  std::size_t train_samples = 20000;
};

struct InversionSpec {
  std::vector<double> zeta;  // one per codec step
  ConstraintDomain domain = ConstraintDomain::y;
  bool normalize_gradient = false;
  std::optional<AdaptivePolicy> adaptive;

  InversionConfig at(std::size_t step_index) const {
    InversionConfig c;
    c.zeta = zeta.at(step_index);
    c.domain = domain;
    c.normalize_gradient = normalize_gradient;
    c.adaptive = adaptive;
    return c;
  }
};

struct EvaluationSpec {
  std::size_t samples = 500;
  std::size_t divergence_samples = 4000;
  std::size_t reference_samples = 100000;
  std::optional<double> peak;

  std::size_t pool() const { return std::max(samples, divergence_samples); }
};

struct InvertSpec {
  std::vector<double> zeta_grid;
  std::size_t grid_samples = 200;
  std::size_t diversity_runs = 16;
  std::size_t equivalence_states = 1000;
  std::size_t trajectory_runs = 16;
  std::size_t adaptive_samples = 100;
};

struct PdSpec {
  std::vector<double> alphas;
  PdAnchor anchor = PdAnchor::posterior_mean;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::discrete_verify;
  std::vector<std::uint64_t> seeds;
  std::string output;
  unsigned threads = 0;
  std::optional<GmmSource> source;
  ScheduleSpec schedule;
  ModelSpec model;
  CodecSpec codec;
  InversionSpec inversion;
  EvaluationSpec evaluation;
  DiscreteSpec discrete;
  InvertSpec invert;
  PdSpec pd;
  config::Json echo;  // the file as given

  bool continuous() const { return kind != ExperimentKind::discrete_verify; }
  NoiseSchedule make_schedule() const {
    return NoiseSchedule::linear(schedule.steps, schedule.beta_start, schedule.beta_end);
  }
};

namespace config {

inline std::size_t count(const Node& n, std::size_t lo = 1, std::size_t hi = 100'000'000) {
  return static_cast<std::size_t>(n.unsigned_integer(lo, hi));
}

inline Matrix read_matrix(const Node& n, Eigen::Index d) {
  const auto rows = n.array();
  if (static_cast<Eigen::Index>(rows.size()) != d) n.fail("expected " + std::to_string(d) + " rows");
  Matrix m(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const auto row = rows[i].numbers();
    if (static_cast<Eigen::Index>(row.size()) != d) rows[i].fail("expected " + std::to_string(d) + " columns");
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = row[j];
  }
  return m;
}

inline GmmSource read_source(Object obj) {
  if (auto preset = obj.optional("preset")) {
    const std::string name = preset->string();
    obj.finish();
    if (name == "benchmark") return presets::benchmark_source();
    preset->fail("unknown preset '" + name + "' (available: benchmark)");
  }
  const Node w = obj.required("weights");
  const Node mu = obj.required("means");
  const Node cov = obj.required("covariances");
  obj.finish();
  const auto weights = w.numbers(1);
  const auto mean_nodes = mu.array(1);
  const auto cov_nodes = cov.array(1);
  if (mean_nodes.size() != weights.size()) mu.fail("needs one mean per weight");
  if (cov_nodes.size() != weights.size()) cov.fail("needs one covariance per weight");
  std::vector<Vector> means;
  for (const auto& m : mean_nodes) {
    const auto v = m.numbers(1);
    if (!means.empty() && static_cast<Eigen::Index>(v.size()) != means.front().size())
      m.fail("dimension differs from the first mean");
    means.push_back(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
  std::vector<Matrix> covs;
  for (const auto& c : cov_nodes) covs.push_back(read_matrix(c, means.front().size()));
  try {
    return GmmSource(weights, means, covs);
  } catch (const InvalidArgument& e) {
    obj.node().fail(e.what());
  }
}

inline ConstraintDomain read_domain(const Node& n) {
  const std::string s = n.string();
  if (s == "y") return ConstraintDomain::y;
  if (s == "x") return ConstraintDomain::x;
  n.fail("expected \"y\" or \"x\"");
}

inline void require_increasing(const Node& n, const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (!(v[i] > v[i - 1])) n.fail("values must be strictly increasing");
}

inline void forbid(Object& root, const char* key, ExperimentKind kind) {
  if (root.has(key))
    throw ConfigError("/" + std::string(key), std::string("section not used by ") + kind_name(kind),
                      root.optional(key)->line());
}

inline ExperimentConfig parse_experiment(const std::string& text) {
  const Document doc = parse_document(text);
  Object root(Node(doc.root, "", doc.lines));
  ExperimentConfig cfg;
  cfg.echo = doc.root;

  const Node kind = root.required("experiment");
  const std::string k = kind.string();
  if (k == "discrete-verify") cfg.kind = ExperimentKind::discrete_verify;
  else if (k == "rd-sweep") cfg.kind = ExperimentKind::rd_sweep;
  else if (k == "invert") cfg.kind = ExperimentKind::invert;
  else if (k == "pd-sweep") cfg.kind = ExperimentKind::pd_sweep;
  else if (k == "idem-audit") cfg.kind = ExperimentKind::idem_audit;
  else kind.fail("unknown experiment '" + k + "'");

  for (const auto& s : root.required("seeds").array(1)) cfg.seeds.push_back(s.unsigned_integer(0, 1ull << 62));
  cfg.output = std::string("results/") + kind_name(cfg.kind);
  if (auto n = root.optional("output")) cfg.output = n->string();
  if (auto n = root.optional("threads")) cfg.threads = static_cast<unsigned>(n->unsigned_integer(0, 1024));

  if (!cfg.continuous()) {
    if (auto n = root.optional("discrete")) {
      Object d(*n);
      auto& s = cfg.discrete;
      if (auto v = d.optional("random_pairs")) s.random_pairs = count(*v);
      if (auto v = d.optional("max_alphabet")) s.max_alphabet = count(*v, 2, 20);
      if (auto v = d.optional("max_codes")) s.max_codes = count(*v, 1, 16);
      if (auto v = d.optional("rejection_samples")) s.rejection_samples = count(*v);
      if (auto v = d.optional("statistical_instances")) s.statistical_instances = count(*v);
      if (auto v = d.optional("optimal_sources")) s.optimal_sources = count(*v);
      d.finish();
    }
    for (const char* key : {"source", "schedule", "model", "codec", "inversion", "evaluation", "invert", "pd"})
      forbid(root, key, cfg.kind);
    root.finish();
    return cfg;
  }
  forbid(root, "discrete", cfg.kind);

  cfg.source = read_source(Object(root.required("source")));

  if (auto n = root.optional("schedule")) {
    Object s(*n);
    if (auto v = s.optional("steps")) cfg.schedule.steps = static_cast<int>(v->unsigned_integer(1, 100000));
    if (auto v = s.optional("beta_start")) cfg.schedule.beta_start = v->number_in(0, 1, "in (0, 1)");
    if (auto v = s.optional("beta_end")) cfg.schedule.beta_end = v->number_in(0, 1, "in (0, 1)");
    s.finish();
    try {
      (void)cfg.make_schedule();
    } catch (const InvalidArgument& e) {
      s.node().fail(e.what());
    }
  }

  if (auto n = root.optional("model")) {
    Object m(*n);
    if (auto v = m.optional("perturbation")) cfg.model.perturbation = v->number_in(0, 1e3, ">= 0");
    if (auto v = m.optional("features")) cfg.model.features = count(*v, 1, 4096);
    m.finish();
  }

  {
    Object c(root.required("codec"));
    const Node steps = c.required("steps");
    cfg.codec.steps = steps.numbers(1);
    for (std::size_t i = 0; i < cfg.codec.steps.size(); ++i)
      if (!(cfg.codec.steps[i] > 0.0)) steps.array()[i].fail("must be > 0");
    if (cfg.kind == ExperimentKind::rd_sweep) {
      if (cfg.codec.steps.size() < 4) steps.fail("rd-sweep needs at least 4 step sizes");
      require_increasing(steps, cfg.codec.steps);
    } else if (cfg.codec.steps.size() != 1) {
      steps.fail(std::string(kind_name(cfg.kind)) + " takes exactly one step size");
    }
    if (auto v = c.optional("companding")) {
      cfg.codec.companding = v->number_in(0, 1, "in (0, 1]");
      if (cfg.codec.companding == 0.0) v->fail("must be in (0, 1]");
    }
    if (auto v = c.optional("symbol_range"))
      cfg.codec.symbol_range = static_cast<int>(v->unsigned_integer(0, TransformCodec::kMaxSymbolRange));
    if (auto v = c.optional("train_samples")) cfg.codec.train_samples = count(*v, 2);
    if (cfg.kind == ExperimentKind::idem_audit && cfg.codec.companding == 1.0)
      throw ConfigError("/codec/companding", "idem-audit needs companding < 1", c.node().line());
    c.finish();
  }

  {
    Object inv(root.required("inversion"));
    const Node z = inv.required("zeta");
    if (z.json().is_array()) {
      cfg.inversion.zeta = z.numbers(1);
      if (cfg.inversion.zeta.size() != cfg.codec.steps.size()) z.fail("needs one value per codec step");
    } else {
      cfg.inversion.zeta.assign(cfg.codec.steps.size(), z.number());
    }
    for (double v : cfg.inversion.zeta)
      if (!(v >= 0.0)) z.fail("must be >= 0");
    if (auto v = inv.optional("domain")) cfg.inversion.domain = read_domain(*v);
    if (auto v = inv.optional("normalize_gradient")) cfg.inversion.normalize_gradient = v->boolean();
    if (auto v = inv.optional("adaptive")) {
      Object a(*v);
      AdaptivePolicy p;
      p.threshold = a.required("threshold").number_in(0, 1e300, ">= 0");
      if (auto f = a.optional("factor")) {
        p.factor = f->number();
        if (!(p.factor > 1.0)) f->fail("must be > 1");
      }
      if (auto r = a.optional("max_retries")) p.max_retries = static_cast<int>(r->unsigned_integer(0, 64));
      a.finish();
      cfg.inversion.adaptive = p;
    }
    inv.finish();
  }

  if (auto n = root.optional("evaluation")) {
    Object e(*n);
    if (auto v = e.optional("samples")) cfg.evaluation.samples = count(*v);
    if (auto v = e.optional("divergence_samples")) cfg.evaluation.divergence_samples = count(*v, 8);
    if (auto v = e.optional("reference_samples")) cfg.evaluation.reference_samples = count(*v, 8);
    if (auto v = e.optional("peak")) cfg.evaluation.peak = v->positive();
    e.finish();
  }

  if (cfg.kind == ExperimentKind::invert) {
    Object s(root.required("invert"));
    const Node grid = s.required("zeta_grid");
    cfg.invert.zeta_grid = grid.numbers(2);
    if (!(cfg.invert.zeta_grid.front() >= 0.0)) grid.fail("must be >= 0");
    require_increasing(grid, cfg.invert.zeta_grid);
    if (auto v = s.optional("grid_samples")) cfg.invert.grid_samples = count(*v);
    if (auto v = s.optional("diversity_runs")) cfg.invert.diversity_runs = count(*v, 2);
    if (auto v = s.optional("equivalence_states")) cfg.invert.equivalence_states = count(*v);
    if (auto v = s.optional("trajectory_runs")) cfg.invert.trajectory_runs = count(*v);
    if (auto v = s.optional("adaptive_samples")) cfg.invert.adaptive_samples = count(*v);
    s.finish();
  } else {
    forbid(root, "invert", cfg.kind);
  }

  if (cfg.kind == ExperimentKind::pd_sweep) {
    Object s(root.required("pd"));
    const Node alphas = s.required("alphas");
    cfg.pd.alphas = alphas.numbers(2);
    require_increasing(alphas, cfg.pd.alphas);
    if (cfg.pd.alphas.front() != 0.0 || cfg.pd.alphas.back() != 1.0)
      alphas.fail("alpha grid must lie in [0, 1] and contain 0 and 1");
    if (auto v = s.optional("anchor")) {
      const std::string a = v->string();
      if (a == "posterior_mean") cfg.pd.anchor = PdAnchor::posterior_mean;
      else if (a == "lattice") cfg.pd.anchor = PdAnchor::lattice;
      else v->fail("expected \"posterior_mean\" or \"lattice\"");
    }
    s.finish();
  } else {
    forbid(root, "pd", cfg.kind);
  }

  root.finish();
  return cfg;
}

inline ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot open " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_experiment(text.str());
}

}  // namespace config
}  // namespace idemlab
