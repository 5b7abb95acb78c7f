#pragma once

// Command implementations behind tools/overlap_cli.cpp. Each returns its document instead of
// printing, so tests can call them directly.

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "overlap/asymptotic.hpp"
#include "overlap/core_data.hpp"
#include "overlap/json_io.hpp"
#include "overlap/lipschitz.hpp"
#include "overlap/minimax_ci.hpp"
#include "overlap/simulation.hpp"

namespace overlap::cli {

using nlohmann::json;

inline const std::vector<double> kDefaultEpsilonSet{0.01, 0.02, 0.03, 0.04, 0.05};
inline const std::vector<double> kDefaultPercentiles{0.80, 0.85, 0.90, 0.95};

struct Outcome {
  json doc;                     // JSON result (analyze, coverage summary, confseq records)
  std::string text;             // CSV result where the command produces one
  std::vector<std::string> warnings;
  bool degenerate = false;      // promoted to exit code 4 by --strict
};

struct CommonConfig {
  std::string input;
  double alpha = 0.05;
  std::optional<double> epsilon;
  std::vector<double> epsilon_set = kDefaultEpsilonSet;
  int j = 2;
  int knn = 5;
};

inline double chosen_epsilon(const Dataset& data, const CommonConfig& c, const RegressorFactory& fit,
                             std::optional<EpsilonChoice>& choice) {
  if (c.epsilon) return *c.epsilon;
  choice = select_epsilon(data, c.epsilon_set, fit, c.alpha);
  return choice->epsilon;
}

inline json t_metrics(const Interval& iv) {
  return {{"endpoint_max", metric_T(iv, TMode::endpoint_max)}, {"length", metric_T(iv, TMode::length)}};
}

struct AnalyzeConfig : CommonConfig {
  std::optional<double> L;
  std::optional<double> percentile;  // contextualize L when no explicit L is given
};

inline double contextual_L(const Dataset& data, double epsilon, double p, const RegressorFactory& fit) {
  const auto idx = partition(data, epsilon).overlap_indices();
  const Dataset ov = subset(data, idx);
  const auto reg = fit(ov);
  return contextualize_L(ov, *reg, p).L;
}

// AIPW, AIPWP(epsilon*), MP, M and MC with their T metrics.
inline Outcome cmd_analyze(const AnalyzeConfig& c) {
  const Dataset data = read_dataset_csv(c.input, c.j);
  const auto fit = default_regressor_factory(c.knn);
  std::optional<EpsilonChoice> choice;
  const double eps = chosen_epsilon(data, c, fit, choice);
  double L;
  if (c.L) L = *c.L;
  else if (c.percentile) L = contextual_L(data, eps, *c.percentile, fit);
  else throw InputError("analyze: give --L or --percentile");

  Outcome out;
  json& d = out.doc;
  d["schema_version"] = kSchemaVersion;
  d["command"] = "analyze";
  d["n"] = data.size();
  d["alpha"] = c.alpha;
  d["epsilon"] = eps;
  d["epsilon_selected"] = !c.epsilon.has_value();
  d["L"] = L;
  d["sigma"] = data.sigma.empty() ? 0.0 : data.sigma[0];
  const OverlapPartition part = partition(data, eps);
  d["non_overlap_count"] = part.non_overlap_count();

  try {
    const auto reg = fit(data);
    const AsymptoticCI a = aipw(data, *reg, c.alpha);
    d["aipw"] = a;
    d["aipw"]["T"] = t_metrics(a.interval());
  } catch (const InputError& e) {
    d["aipw"] = {{"error", e.what()}};
    out.warnings.push_back(std::string("aipw skipped: ") + e.what());
  }
  const AsymptoticCI ap = choice ? choice->ci : aipw_partial(data, eps, fit, c.alpha);
  d["aipwp"] = ap;
  d["aipwp"]["T"] = t_metrics(ap.interval());

  const IntervalReport mp = mp_interval(data, eps, L, c.alpha);
  d["mp"] = mp;
  d["mp"]["T"] = t_metrics(mp.interval());
  if (mp.degenerate) {
    out.degenerate = true;
    out.warnings.push_back("mp degenerate: no non-overlap units at epsilon " + std::to_string(eps));
  }
  const IntervalReport m = m_interval(data, L, c.alpha);
  d["m"] = m;
  d["m"]["T"] = t_metrics(m.interval());

  const AsymptoticCI ap2 = aipw_partial(data, eps, fit, c.alpha / 2.0);
  const IntervalReport mp2 = mp_interval(data, eps, L, c.alpha / 2.0);
  const Interval mc = combine_intervals(ap2.interval(), mp2.interval());
  d["mc"] = {{"lower", mc.lower}, {"upper", mc.upper}, {"alpha", mc.alpha}, {"aipwp_half", ap2.interval()},
             {"mp_half", mp2.interval()}, {"T", t_metrics(mc)}};
  for (const auto* r : {&mp, &m, &mp2})
    if (r->bracket_warning) out.warnings.push_back("delta search did not bracket a minimum");
  d["warnings"] = out.warnings;
  return out;
}

struct SensitivityConfig : CommonConfig {
  std::vector<double> L;            // explicit constants bypass contextualization
  std::vector<double> percentiles = kDefaultPercentiles;
};

// CSV rows p,L,lower,upper,length,T for MP over the smoothness grid.
inline Outcome cmd_sensitivity(const SensitivityConfig& c) {
  const Dataset data = read_dataset_csv(c.input, c.j);
  const auto fit = default_regressor_factory(c.knn);
  std::optional<EpsilonChoice> choice;
  const double eps = chosen_epsilon(data, c, fit, choice);
  std::vector<std::pair<std::optional<double>, double>> grid;
  if (!c.L.empty()) {
    for (double L : c.L) grid.push_back({std::nullopt, L});
  } else {
    if (c.percentiles.empty()) throw InputError("sensitivity: empty percentile grid");
    const auto idx = partition(data, eps).overlap_indices();
    const Dataset ov = subset(data, idx);
    const auto reg = fit(ov);
    for (double p : c.percentiles) grid.push_back({p, contextualize_L(ov, *reg, p).L});
  }
  Outcome out;
  std::ostringstream os;
  os.precision(12);
  os << "p,L,epsilon,lower,upper,length,T\n";
  for (const auto& [p, L] : grid) {
    const IntervalReport r = mp_interval(data, eps, L, c.alpha);
    if (r.degenerate) out.degenerate = true;
    if (p) os << *p;
    os << ',' << L << ',' << eps << ',' << r.lower << ',' << r.upper << ',' << r.length() << ','
       << metric_T(r, TMode::endpoint_max) << '\n';
  }
  if (out.degenerate) out.warnings.push_back("mp degenerate: no non-overlap units");
  out.text = os.str();
  return out;
}

struct CoverageConfig {
  CoverageSpec spec;
  std::vector<double> eta{0.05};  // example1 non-overlap parameter grid
  std::vector<double> kappa{0.01};  // rct propensity-map grid
};

inline std::vector<double> json_numbers(const json& v) {
  if (v.is_array()) return v.get<std::vector<double>>();
  return {v.get<double>()};
}

// Keys: dgp, n, o, eta (number or list), H, sigma, kappa (number or list), d, p, L, alpha,
// epsilon_set, methods, reps, seed, knn.
inline CoverageConfig coverage_config_from_json(const json& j) {
  CoverageConfig c;
  try {
    auto& s = c.spec;
    if (j.contains("dgp")) s.dgp = j["dgp"].get<std::string>();
    if (j.contains("n")) s.example1.n = s.rct.n = j["n"].get<std::size_t>();
    if (j.contains("o")) s.example1.o = j["o"].get<double>();
    if (j.contains("H")) s.example1.H = j["H"].get<double>();
    if (j.contains("sigma")) s.example1.sigma = s.rct.sigma = j["sigma"].get<double>();
    if (j.contains("d")) s.rct.d = j["d"].get<std::size_t>();
    if (j.contains("p")) s.rct.p = j["p"].get<double>();
    if (j.contains("L")) s.L = j["L"].get<double>();
    if (j.contains("alpha")) s.alpha = j["alpha"].get<double>();
    if (j.contains("epsilon_set")) s.epsilon_set = j["epsilon_set"].get<std::vector<double>>();
    if (j.contains("reps")) s.reps = j["reps"].get<std::size_t>();
    if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("knn")) s.knn_k = j["knn"].get<int>();
    if (j.contains("methods")) {
      s.methods.clear();
      for (const auto& m : j["methods"]) s.methods.push_back(parse_method(m.get<std::string>()));
    }
    if (j.contains("eta")) c.eta = json_numbers(j["eta"]);
    if (j.contains("kappa")) c.kappa = json_numbers(j["kappa"]);
  } catch (const json::exception& e) {
    throw InputError(std::string("coverage config: ") + e.what());
  }
  return c;
}

// CSV (one row per method per grid point) in `text`, JSON summary in `doc`.
inline Outcome cmd_coverage(const CoverageConfig& c) {
  Outcome out;
  out.doc = {{"schema_version", kSchemaVersion}, {"command", "coverage"}, {"dgp", c.spec.dgp},
             {"L", c.spec.L}, {"alpha", c.spec.alpha}, {"reps", c.spec.reps}, {"seed", c.spec.seed},
             {"points", json::array()}};
  std::ostringstream os;
  os.precision(12);
  os << "dgp,param,value,method,target,ok,failed,coverage,coverage_se,mean_half_length,half_length_se\n";
  const bool ex1 = c.spec.dgp == "example1";
  const std::string param = ex1 ? "eta" : "kappa";
  for (double v : ex1 ? c.eta : c.kappa) {
    CoverageSpec s = c.spec;
    if (ex1) s.example1.eta = v;
    else s.kappa = v;
    const CoverageResult r = coverage_experiment(s);
    json pt = {{param, v}, {"methods", r.methods}, {"epsilon_star", json::array()}};
    for (double e : r.epsilon_star) pt["epsilon_star"].push_back(num(e));
    out.doc["points"].push_back(pt);
    for (const auto& m : r.methods)
      os << s.dgp << ',' << param << ',' << v << ',' << method_name(m.method) << ',' << m.target << ',' << m.ok << ','
         << m.failed << ',' << m.coverage << ',' << m.coverage_se << ',' << m.mean_half_length << ','
         << m.half_length_se << '\n';
  }
  out.text = os.str();
  return out;
}

struct SimulateConfig {
  std::string dgp = "example1";  // example1 | toy | rct | sampling
  Example1Params example1;
  ToyConfig toy;
  SyntheticRctParams rct;
  double kappa = 0.01;
  SamplingDgpParams sampling;
  std::uint64_t seed = 0;
};

// Dataset CSV in `text`; the truth table (f0, f1, tau per unit) in doc["truth_csv"].
inline Outcome cmd_simulate(const SimulateConfig& c) {
  Simulated s;
  if (c.dgp == "example1") {
    Example1Params p = c.example1;
    p.seed = c.seed;
    s = simulate_example1(p);
  } else if (c.dgp == "toy") {
    s.data = build_toy_dataset(c.toy, c.seed);
    s.f = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(s.data.size()), 2);
  } else if (c.dgp == "rct") {
    SyntheticRctParams p = c.rct;
    p.seed = c.seed;
    s = rct_to_observational(simulate_synthetic_rct(p), p.p, c.kappa, derive_seed(c.seed, 7));
  } else if (c.dgp == "sampling") {
    SamplingDgpParams p = c.sampling;
    p.seed = c.seed;
    s = simulate_sampling_dgp(p);
  } else {
    throw InputError("simulate: unknown dgp '" + c.dgp + "' (expected example1, toy, rct or sampling)");
  }
  Outcome out;
  std::ostringstream os;
  write_dataset_csv(os, s.data);
  out.text = os.str();
  std::ostringstream ts;
  ts.precision(17);
  ts << "f0,f1,tau\n";
  for (Eigen::Index i = 0; i < s.f.rows(); ++i) ts << s.f(i, 0) << ',' << s.f(i, 1) << ',' << s.f(i, 1) - s.f(i, 0) << '\n';
  out.doc = {{"truth_csv", ts.str()}};
  return out;
}

struct SampleOptionsConfig {
  std::string input;  // empty: simulate the sampling design
  SamplingDgpParams dgp;
  double epsilon = 0.04;
  std::vector<double> L{4.28, 5.48, 6.65, 13.11};
  double alpha = 0.05;
  std::size_t n_mc = 10;
  std::uint64_t seed = 0;
  int j = 2;
};

// CSV option,L,epsilon,n_mc,metric; option "None" is the pre-sampling T(MP).
inline Outcome cmd_sample_options(const SampleOptionsConfig& c) {
  Dataset data;
  if (c.input.empty()) {
    SamplingDgpParams p = c.dgp;
    p.seed = c.seed;
    data = simulate_sampling_dgp(p).data;
  } else {
    data = read_dataset_csv(c.input, c.j);
  }
  Outcome out;
  std::ostringstream os;
  os.precision(12);
  os << "option,L,epsilon,n_mc,metric\n";
  for (double L : c.L) {
    const IntervalReport before = mp_interval(data, c.epsilon, L, c.alpha);
    os << "None," << L << ',' << c.epsilon << ",0," << metric_T(before, TMode::length) << '\n';
    for (const auto& opt : standard_sampling_options())
      os << opt.name << ',' << L << ',' << c.epsilon << ',' << c.n_mc << ','
         << evaluate_sampling_option(data, opt, c.epsilon, L, c.alpha, c.n_mc, derive_seed(c.seed, 11)) << '\n';
  }
  out.text = os.str();
  return out;
}

struct ConfseqConfig {
  ConfseqSpec spec;
  std::size_t designs = 0;     // > 0 adds a Monte Carlo coverage summary
  std::size_t noise_reps = 50;
};

// One JSON record per step (JSON lines in `text`); optional coverage summary as the last line.
inline Outcome cmd_confseq(const ConfseqConfig& c) {
  const ConfidenceSequence cs = run_confseq(c.spec);
  Outcome out;
  std::ostringstream os;
  for (const auto& e : cs.entries) {
    json r = e;
    r["schema_version"] = kSchemaVersion;
    r["alpha"] = cs.alpha;
    os << r.dump() << '\n';
  }
  if (c.designs > 0) {
    const ConfseqCoverage cov = confseq_coverage(c.spec, c.designs, c.noise_reps);
    json r = {{"schema_version", kSchemaVersion}, {"summary", true},     {"reps", cov.reps},
              {"joint_coverage", cov.joint_coverage}, {"step_coverage", cov.step_coverage},
              {"mean_length", cov.mean_length},       {"alpha_spent", cov.alpha_spent}};
    os << r.dump() << '\n';
  }
  out.text = os.str();
  return out;
}

}  // namespace overlap::cli
