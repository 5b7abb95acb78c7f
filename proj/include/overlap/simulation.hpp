#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "overlap/asymptotic.hpp"
#include "overlap/core_data.hpp"
#include "overlap/errors.hpp"
#include "overlap/lipschitz.hpp"
#include "overlap/minimax_ci.hpp"
#include "overlap/modulus.hpp"

namespace overlap {

using Rng = std::mt19937_64;

// splitmix64 step; used to derive independent stream seeds from one master seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(splitmix64(master) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

inline bool bernoulli(Rng& rng, double p) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

// Data plus the outcome function evaluated at every unit.
struct Simulated {
  Dataset data;
  Eigen::MatrixXd f;  // n x 2
  std::vector<double> tau() const {
    std::vector<double> t(static_cast<std::size_t>(f.rows()));
    for (Eigen::Index i = 0; i < f.rows(); ++i) t[static_cast<std::size_t>(i)] = f(i, 1) - f(i, 0);
    return t;
  }
};

// ---------------------------------------------------------------------------------------
// Example 1: one covariate on [0,1] with extreme propensities near the boundary.

struct Example1Params {
  std::size_t n = 1000;
  double o = 0.05;    // overlap parameter
  double eta = 0.05;  // non-overlap parameter
  double H = 0.25;
  double sigma = 0.06;
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 1) throw InputError("Example1Params: n must be positive");
    if (!(o > 0.0 && o < 0.5)) throw InputError("Example1Params: o must lie in (0, 1/2)");
    if (!(eta > 0.0 && eta < 0.5)) throw InputError("Example1Params: eta must lie in (0, 1/2)");
    if (!(sigma > 0.0)) throw InputError("Example1Params: sigma must be positive");
  }
};

inline double example1_propensity(double x, double o, double eta) {
  if (x <= eta) return o / eta * x;
  if (x <= 2.0 * eta) return -o / eta * (x - eta) + (1.0 - o);
  return (1.0 - 2.0 * o) / (1.0 - 2.0 * eta) * (x - 2.0 * eta) + o;
}

inline double example1_h(double x, double H) { return 8.0 * H * (x - 0.5) * (x - 0.5); }

inline double example1_F(double x, double eta, double H) {
  if (x <= eta / 2.0) return 4.0 * H / (eta * eta) * (x - eta / 2.0) * (x - eta / 2.0) + H;
  if (x <= eta) return -4.0 * H / (eta * eta) * x * (x - eta);
  if (x <= eta + 0.5) return 32.0 * H * (x - eta) * (x - eta - 0.5);
  return -16.0 * H / ((2.0 * eta - 1.0) * (2.0 * eta - 1.0)) * (x - eta - 0.5) * (x - 1.0);
}

inline double example1_outcome(double x, int z, double eta, double H) {
  return example1_F(x, eta, H) + (z == 1 ? example1_h(x, H) : 0.0);
}

// Smallest L with f(., 0) and f(., 1) both L-Lipschitz on [0,1]. Every branch of F and h is
// quadratic, so |f'| peaks at a branch endpoint.
inline double example1_lipschitz_bound(double eta, double H) {
  const double e2 = eta * eta;
  const double c4 = -16.0 * H / ((2.0 * eta - 1.0) * (2.0 * eta - 1.0));
  struct Branch {
    double a, b;
    std::function<double(double)> dF;
  };
  const std::array<Branch, 4> br{{
      {0.0, eta / 2.0, [&](double x) { return 8.0 * H / e2 * (x - eta / 2.0); }},
      {eta / 2.0, eta, [&](double x) { return -4.0 * H / e2 * (2.0 * x - eta); }},
      {eta, eta + 0.5, [&](double x) { return 32.0 * H * (2.0 * x - 2.0 * eta - 0.5); }},
      {eta + 0.5, 1.0, [&](double x) { return c4 * (2.0 * x - eta - 1.5); }},
  }};
  double L = 0.0;
  for (const auto& b : br)
    for (double x : {b.a, b.b}) {
      const double dh = 16.0 * H * (x - 0.5);
      L = std::max({L, std::abs(b.dF(x)), std::abs(b.dF(x) + dh)});
    }
  return L;
}

inline Simulated simulate_example1(const Example1Params& p) {
  p.validate();
  Rng rng(derive_seed(p.seed, 1));
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N(0.0, p.sigma);
  Simulated s;
  s.data.x.resize(static_cast<Eigen::Index>(p.n), 1);
  s.f.resize(static_cast<Eigen::Index>(p.n), 2);
  for (std::size_t i = 0; i < p.n; ++i) {
    const double x = U(rng);
    const double pi = example1_propensity(x, p.o, p.eta);
    const int z = bernoulli(rng, pi) ? 1 : 0;
    const auto r = static_cast<Eigen::Index>(i);
    s.data.x(r, 0) = x;
    s.f(r, 0) = example1_outcome(x, 0, p.eta, p.H);
    s.f(r, 1) = example1_outcome(x, 1, p.eta, p.H);
    s.data.z.push_back(z);
    s.data.pi.push_back(pi);
    s.data.y.push_back(s.f(r, z) + N(rng));
    s.data.sigma.push_back(p.sigma);
  }
  return s;
}

// Toy geometry with outcome f = 0 and unit Gaussian noise.
inline Dataset build_toy_dataset(const ToyConfig& cfg, std::uint64_t seed) {
  Dataset d = toy_layout(cfg);
  Rng rng(derive_seed(seed, 2));
  std::normal_distribution<double> N(0.0, 1.0);
  for (double& y : d.y) y = N(rng);
  return d;
}

// ---------------------------------------------------------------------------------------
// RCT thinning and the synthetic case study.

struct ThinResult {
  Dataset data;                  // kept units, pi set to the target propensity
  std::vector<std::size_t> kept; // their indices in the RCT
};

// Keep unit i iff z_i = C_i and O_i = 1 with C_i ~ Bernoulli(pi_i) and O_i correcting for the
// RCT assignment probability p. Kept units have P(z = 1 | x) = pi(x); P(kept) = min(p, 1 - p).
inline ThinResult thin_rct(const Dataset& rct, const std::vector<double>& target_pi, double p, std::uint64_t seed) {
  if (!(p > 0.0 && p < 1.0)) throw InputError("thin_rct: p must lie in (0,1)");
  const std::size_t n = rct.size();
  if (target_pi.size() != n) throw InputError("thin_rct: target propensity length differs from dataset size");
  Rng rng(derive_seed(seed, 3));
  ThinResult out;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(target_pi[i] >= 0.0 && target_pi[i] <= 1.0)) throw InputError("thin_rct: target propensity outside [0,1]");
    const int c = bernoulli(rng, target_pi[i]) ? 1 : 0;
    const bool o = p <= 0.5 ? (rct.z[i] == 1 || bernoulli(rng, p / (1.0 - p)))
                            : (rct.z[i] == 0 || bernoulli(rng, (1.0 - p) / p));
    if (rct.z[i] == c && o) out.kept.push_back(i);
  }
  out.data = subset(rct, out.kept);
  for (std::size_t r = 0; r < out.kept.size(); ++r) out.data.pi[r] = target_pi[out.kept[r]];
  return out;
}

// Propensity assigned from the percentile of a fitted treatment effect; kappa = -1 means 1/2
// everywhere.
inline double propensity_map_E(double percentile, double kappa, Rng& rng) {
  if (!(percentile >= 0.0 && percentile <= 1.0)) throw InputError("propensity_map_E: percentile outside [0,1]");
  if (kappa == -1.0) return 0.5;
  const double x = percentile;
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  if (x <= 0.075 + kappa || 1.0 - x <= 0.075 + kappa) return uni(0.005, 0.03);
  if (x <= 0.1 + kappa || 1.0 - x <= 0.1 + kappa) return uni(0.03, 0.05);
  if (x <= 0.15 + kappa) return uni(0.05, 0.1);
  return 0.5;
}

struct SyntheticRctParams {
  std::size_t n = 2000;
  std::size_t d = 10;
  double p = 0.483;
  double sigma = 0.5;
  std::uint64_t seed = 0;
};

// Linear baseline, effect -0.2 shifted by the first two covariates.
inline double synthetic_rct_outcome(const Eigen::RowVectorXd& x, int z) {
  double base = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) base += 0.3 * x(j) / static_cast<double>(j + 1);
  const double tau = -0.2 + 0.15 * x(0) - 0.1 * (x.size() > 1 ? x(1) : 0.0);
  return base + (z == 1 ? tau : 0.0);
}

// Euclidean Lipschitz constant of synthetic_rct_outcome in d dimensions (max over arms).
inline double synthetic_rct_lipschitz(std::size_t d) {
  Eigen::VectorXd g0(static_cast<Eigen::Index>(d));
  for (std::size_t j = 0; j < d; ++j) g0(static_cast<Eigen::Index>(j)) = 0.3 / static_cast<double>(j + 1);
  Eigen::VectorXd g1 = g0;
  g1(0) += 0.15;
  if (d > 1) g1(1) -= 0.1;
  return std::max(g0.norm(), g1.norm());
}

inline Simulated simulate_synthetic_rct(const SyntheticRctParams& p) {
  if (p.n < 1 || p.d < 1) throw InputError("SyntheticRctParams: n and d must be positive");
  Rng rng(derive_seed(p.seed, 4));
  std::normal_distribution<double> X(0.0, 1.0);
  std::normal_distribution<double> N(0.0, p.sigma);
  Simulated s;
  s.data.x.resize(static_cast<Eigen::Index>(p.n), static_cast<Eigen::Index>(p.d));
  s.f.resize(static_cast<Eigen::Index>(p.n), 2);
  for (std::size_t i = 0; i < p.n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < p.d; ++j) s.data.x(r, static_cast<Eigen::Index>(j)) = X(rng);
    const int z = bernoulli(rng, p.p) ? 1 : 0;
    const Eigen::RowVectorXd xi = s.data.x.row(r);
    s.f(r, 0) = synthetic_rct_outcome(xi, 0);
    s.f(r, 1) = synthetic_rct_outcome(xi, 1);
    s.data.z.push_back(z);
    s.data.pi.push_back(p.p);
    s.data.y.push_back(s.f(r, z) + N(rng));
    s.data.sigma.push_back(p.sigma);
  }
  return s;
}

// Observational sample from an RCT: T-learner effect estimate -> percentile -> E_kappa -> thinning.
inline Simulated rct_to_observational(const Simulated& rct, double p, double kappa, std::uint64_t seed,
                                      const RegressorFactory& fit = default_regressor_factory()) {
  const std::size_t n = rct.data.size();
  const auto reg = fit(rct.data);
  std::vector<double> tau_hat(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::RowVectorXd xi = rct.data.x.row(static_cast<Eigen::Index>(i));
    tau_hat[i] = reg->predict(xi, 1) - reg->predict(xi, 0);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return tau_hat[a] < tau_hat[b]; });
  Rng rng(derive_seed(seed, 5));
  std::vector<double> pi(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double pct = n > 1 ? static_cast<double>(r) / static_cast<double>(n - 1) : 0.5;
    pi[order[r]] = propensity_map_E(pct, kappa, rng);
  }
  const ThinResult th = thin_rct(rct.data, pi, p, derive_seed(seed, 6));
  Simulated out;
  out.data = th.data;
  out.f.resize(static_cast<Eigen::Index>(th.kept.size()), 2);
  for (std::size_t r = 0; r < th.kept.size(); ++r)
    out.f.row(static_cast<Eigen::Index>(r)) = rct.f.row(static_cast<Eigen::Index>(th.kept[r]));
  return out;
}

// ---------------------------------------------------------------------------------------
// Coverage experiments.

enum class Method { AIPW, AIPWP, MP, M, MC };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::AIPW: return "AIPW";
    case Method::AIPWP: return "AIPWP";
    case Method::MP: return "MP";
    case Method::M: return "M";
    case Method::MC: return "MC";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::AIPW, Method::AIPWP, Method::MP, Method::M, Method::MC})
    if (s == method_name(m)) return m;
  throw InputError("unknown method '" + s + "' (expected AIPW, AIPWP, MP, M or MC)");
}

struct CoverageSpec {
  std::string dgp = "example1";  // example1 | rct
  Example1Params example1;
  SyntheticRctParams rct;
  double kappa = 0.01;
  double L = 14.0;
  double alpha = 0.05;
  std::vector<double> epsilon_set{0.01, 0.02, 0.03, 0.04, 0.05};
  std::vector<Method> methods{Method::AIPW, Method::AIPWP, Method::MP, Method::M, Method::MC};
  std::size_t reps = 100;
  std::uint64_t seed = 0;
  int knn_k = 5;
};

// Per-replication outcome of one method.
struct MethodDraw {
  double lower = 0.0;
  double upper = 0.0;
  double target = 0.0;
  bool covered = false;
};

struct MethodSummary {
  Method method = Method::MP;
  std::string target;       // name of the estimand scored
  std::size_t ok = 0;
  std::size_t failed = 0;
  double coverage = 0.0;
  double coverage_se = 0.0;
  double mean_half_length = 0.0;
  double half_length_se = 0.0;
  double coverage_alt = 0.0;  // AIPWP only: coverage of tau_plus
  std::string alt_target;
  std::vector<std::string> errors;
};

struct CoverageResult {
  std::vector<MethodSummary> methods;
  std::vector<double> epsilon_star;  // per replication (NaN on failure)

  const MethodSummary& get(Method m) const {
    for (const auto& s : methods)
      if (s.method == m) return s;
    throw InputError(std::string("coverage result has no method ") + method_name(m));
  }
};

inline Simulated draw_coverage_data(const CoverageSpec& spec, std::uint64_t seed) {
  if (spec.dgp == "example1") {
    Example1Params p = spec.example1;
    p.seed = seed;
    return simulate_example1(p);
  }
  if (spec.dgp == "rct") {
    SyntheticRctParams p = spec.rct;
    p.seed = seed;
    return rct_to_observational(simulate_synthetic_rct(p), p.p, spec.kappa, derive_seed(seed, 7),
                                default_regressor_factory(spec.knn_k));
  }
  throw InputError("coverage_experiment: unknown dgp '" + spec.dgp + "'");
}

// Each replication draws fresh data, picks epsilon* from the AIPW_partial lengths and scores
// AIPW, AIPWP and M against tau, MP against tau_minus, MC against tau. Failed replications are
// counted and skipped.
inline CoverageResult coverage_experiment(const CoverageSpec& spec) {
  if (spec.reps < 1) throw InputError("coverage_experiment: reps must be >= 1");
  const auto fit = default_regressor_factory(spec.knn_k);
  auto has = [&](Method m) { return std::find(spec.methods.begin(), spec.methods.end(), m) != spec.methods.end(); };
  std::map<Method, std::vector<MethodDraw>> draws;
  std::map<Method, std::vector<bool>> alt;
  std::map<Method, std::size_t> failed;
  std::map<Method, std::vector<std::string>> errors;
  CoverageResult res;
  for (std::size_t r = 0; r < spec.reps; ++r) {
    const Simulated sim = draw_coverage_data(spec, derive_seed(spec.seed, 1000 + r));
    const std::vector<double> tau = sim.tau();
    std::optional<EpsilonChoice> eps;
    std::string eps_error;
    try {
      eps = select_epsilon(sim.data, spec.epsilon_set, fit, spec.alpha);
    } catch (const Error& e) {
      eps_error = e.what();
    }
    res.epsilon_star.push_back(eps ? eps->epsilon : std::numeric_limits<double>::quiet_NaN());
    EstimandDecomposition dec;
    if (eps) dec = decompose_estimand(tau, partition(sim.data, eps->epsilon));
    else dec.tau = std::accumulate(tau.begin(), tau.end(), 0.0) / static_cast<double>(tau.size());

    auto record = [&](Method m, double lo, double hi, double target) {
      draws[m].push_back({lo, hi, target, lo <= target && target <= hi});
    };
    auto fail = [&](Method m, const std::string& why) {
      ++failed[m];
      if (errors[m].size() < 5) errors[m].push_back("rep " + std::to_string(r) + ": " + why);
    };
    auto need_eps = [&](Method m) {
      if (!eps) fail(m, "epsilon selection failed: " + eps_error);
      return eps.has_value();
    };

    for (Method m : spec.methods) {
      try {
        switch (m) {
          case Method::AIPW: {
            const auto reg = fit(sim.data);
            const AsymptoticCI ci = aipw(sim.data, *reg, spec.alpha);
            record(m, ci.lower, ci.upper, dec.tau);
            break;
          }
          case Method::AIPWP: {
            if (!need_eps(m)) break;
            record(m, eps->ci.lower, eps->ci.upper, dec.tau);
            alt[m].push_back(eps->ci.lower <= dec.tau_plus && dec.tau_plus <= eps->ci.upper);
            break;
          }
          case Method::MP: {
            if (!need_eps(m)) break;
            const IntervalReport rep = mp_interval(sim.data, eps->epsilon, spec.L, spec.alpha);
            record(m, rep.lower, rep.upper, dec.tau_minus);
            break;
          }
          case Method::M: {
            const IntervalReport rep = m_interval(sim.data, spec.L, spec.alpha);
            record(m, rep.lower, rep.upper, dec.tau);
            break;
          }
          case Method::MC: {
            if (!need_eps(m)) break;
            const AsymptoticCI a = aipw_partial(sim.data, eps->epsilon, fit, spec.alpha / 2.0);
            const IntervalReport b = mp_interval(sim.data, eps->epsilon, spec.L, spec.alpha / 2.0);
            const Interval c = combine_intervals(a.interval(), b.interval());
            record(m, c.lower, c.upper, dec.tau);
            break;
          }
        }
      } catch (const Error& e) {
        fail(m, e.what());
      }
    }
  }
  for (Method m : spec.methods) {
    if (!has(m)) continue;
    MethodSummary s;
    s.method = m;
    s.target = m == Method::MP ? "tau_minus" : "tau";
    const auto& d = draws[m];
    s.ok = d.size();
    s.failed = failed[m];
    s.errors = errors[m];
    if (!d.empty()) {
      const double k = static_cast<double>(d.size());
      double cov = 0.0, hl = 0.0, hl2 = 0.0;
      for (const auto& x : d) {
        cov += x.covered ? 1.0 : 0.0;
        const double h = 0.5 * (x.upper - x.lower);
        hl += h;
        hl2 += h * h;
      }
      s.coverage = cov / k;
      s.coverage_se = std::sqrt(s.coverage * (1.0 - s.coverage) / k);
      s.mean_half_length = hl / k;
      s.half_length_se = d.size() > 1 ? std::sqrt(std::max(0.0, (hl2 - k * s.mean_half_length * s.mean_half_length) /
                                                                    (k - 1.0)) / k)
                                      : 0.0;
    }
    if (m == Method::AIPWP && !alt[m].empty()) {
      s.alt_target = "tau_plus";
      s.coverage_alt = static_cast<double>(std::count(alt[m].begin(), alt[m].end(), true)) /
                       static_cast<double>(alt[m].size());
    }
    res.methods.push_back(std::move(s));
  }
  return res;
}

// Distance from an interval to a target; zero when covered.
inline double interval_distance(double lower, double upper, double target) {
  return std::max({0.0, lower - target, target - upper});
}

// ---------------------------------------------------------------------------------------
// Data collection: sampling options and continual sampling.

struct SamplingDgpParams {
  std::size_t n = 500;
  double sigma = 0.06;
  double outcome_lipschitz = 4.0;  // the Example 1 outcome is rescaled to this Lipschitz constant
  std::uint64_t seed = 0;
};

// Propensity 0.01 on the outer strips (0,0.1) and (0.9,1), 0.03 on (0.4,0.6), 1/2 elsewhere.
inline double sampling_dgp_propensity(double x) {
  if ((x > 0.0 && x < 0.1) || (x > 0.9 && x < 1.0)) return 0.01;
  if (x > 0.4 && x < 0.6) return 0.03;
  return 0.5;
}

inline double sampling_dgp_outcome(double x, int z, double outcome_lipschitz) {
  const Example1Params d;
  return outcome_lipschitz / example1_lipschitz_bound(d.eta, d.H) * example1_outcome(x, z, d.eta, d.H);
}

inline Simulated simulate_sampling_dgp(const SamplingDgpParams& p) {
  Rng rng(derive_seed(p.seed, 8));
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N(0.0, p.sigma);
  Simulated s;
  s.data.x.resize(static_cast<Eigen::Index>(p.n), 1);
  s.f.resize(static_cast<Eigen::Index>(p.n), 2);
  for (std::size_t i = 0; i < p.n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const double x = U(rng);
    const double pi = sampling_dgp_propensity(x);
    const int z = bernoulli(rng, pi) ? 1 : 0;
    s.data.x(r, 0) = x;
    s.f(r, 0) = sampling_dgp_outcome(x, 0, p.outcome_lipschitz);
    s.f(r, 1) = sampling_dgp_outcome(x, 1, p.outcome_lipschitz);
    s.data.z.push_back(z);
    s.data.pi.push_back(pi);
    s.data.y.push_back(s.f(r, z) + N(rng));
    s.data.sigma.push_back(p.sigma);
  }
  return s;
}

// Units inside `region` are re-collected with propensity `new_propensity`; each eligible unit
// is selected independently with probability `selection_prob`.
struct SamplingOption {
  std::string name;
  std::function<bool(const Eigen::RowVectorXd&)> region;
  double new_propensity = 0.5;
  double selection_prob = 1.0;
};

inline std::function<bool(const Eigen::RowVectorXd&)> interval_region(std::vector<std::pair<double, double>> parts) {
  return [parts = std::move(parts)](const Eigen::RowVectorXd& x) {
    for (const auto& [a, b] : parts)
      if (x(0) > a && x(0) < b) return true;
    return false;
  };
}

inline std::vector<SamplingOption> standard_sampling_options() {
  return {
      {"Option_1", interval_region({{0.4, 0.6}}), 0.5, 1.0},
      {"Option_2", interval_region({{0.0, 0.1}, {0.9, 1.0}}), 0.5, 1.0},
      {"Oracle", interval_region({{0.0, 0.1}, {0.4, 0.6}, {0.9, 1.0}}), 0.5, 0.5},
  };
}

// One draw of the updated design: selected units get the new propensity and a fresh treatment.
inline Dataset apply_sampling_option(const Dataset& data, const SamplingOption& opt, Rng& rng) {
  Dataset out = data;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!opt.region(data.x.row(static_cast<Eigen::Index>(i)))) continue;
    if (opt.selection_prob < 1.0 && !bernoulli(rng, opt.selection_prob)) continue;
    out.pi[i] = opt.new_propensity;
    out.z[i] = bernoulli(rng, opt.new_propensity) ? 1 : 0;
  }
  return out;
}

// Mean over n_mc treatment draws of the MP_epsilon interval length. Outcomes are not used.
inline double evaluate_sampling_option(const Dataset& data, const SamplingOption& opt, double epsilon, double L,
                                       double alpha, std::size_t n_mc, std::uint64_t seed) {
  if (n_mc < 1) throw InputError("evaluate_sampling_option: n_mc must be >= 1");
  Rng rng(derive_seed(seed, 9));
  double total = 0.0;
  for (std::size_t k = 0; k < n_mc; ++k) {
    const Dataset d = apply_sampling_option(data, opt, rng);
    const std::vector<double> zero(d.size(), 0.0);
    total += metric_T(mp_interval(d, epsilon, L, alpha, zero), TMode::length);
  }
  return total / static_cast<double>(n_mc);
}

struct ConfseqSpec {
  SamplingDgpParams dgp;
  std::vector<std::pair<double, double>> epochs{{0.40, 0.47}, {0.47, 0.53}, {0.53, 0.60},
                                                {0.0, 0.03},  {0.03, 0.07}, {0.07, 0.10}};
  double epsilon = 0.04;
  double L = 5.48;
  double alpha = 0.05;
  std::uint64_t seed = 0;
};

// Fixed design of a continual-sampling run: step t has every epoch up to t re-collected.
struct ConfseqDesign {
  std::vector<Dataset> steps;       // outcomes left at zero
  std::vector<std::vector<int>> resampled_at;  // per unit, the step (1-based) it was re-collected; 0 = never
  Eigen::MatrixXd f;                // truth, n x 2
};

inline ConfseqDesign make_confseq_design(const ConfseqSpec& spec, std::uint64_t design_seed) {
  SamplingDgpParams dp = spec.dgp;
  dp.seed = design_seed;
  const Simulated base = simulate_sampling_dgp(dp);
  Rng rng(derive_seed(design_seed, 10));
  ConfseqDesign des;
  des.f = base.f;
  Dataset cur = base.data;
  std::fill(cur.y.begin(), cur.y.end(), 0.0);
  std::vector<int> when(cur.size(), 0);
  for (std::size_t t = 0; t < spec.epochs.size(); ++t) {
    const auto [a, b] = spec.epochs[t];
    for (std::size_t i = 0; i < cur.size(); ++i) {
      const double x = cur.x(static_cast<Eigen::Index>(i), 0);
      if (x > a && x < b) {
        cur.pi[i] = 0.5;
        cur.z[i] = bernoulli(rng, 0.5) ? 1 : 0;
        when[i] = static_cast<int>(t + 1);
      }
    }
    des.steps.push_back(cur);
    des.resampled_at.push_back(when);
  }
  return des;
}

struct ConfseqCoverage {
  std::size_t reps = 0;
  double joint_coverage = 0.0;
  std::vector<double> step_coverage;
  std::vector<double> mean_length;  // per step
  double alpha_spent = 0.0;         // sum of alpha_t over the horizon
};

// Monte Carlo joint coverage of the confidence sequence. Interval lengths depend on the design
// only, so each design is solved once and reused for `noise_reps` outcome draws; a unit's noise
// is redrawn whenever it is re-collected.
inline ConfseqCoverage confseq_coverage(const ConfseqSpec& spec, std::size_t designs, std::size_t noise_reps) {
  const std::size_t T = spec.epochs.size();
  ConfseqCoverage out;
  out.step_coverage.assign(T, 0.0);
  out.mean_length.assign(T, 0.0);
  for (std::size_t t = 1; t <= T; ++t) out.alpha_spent += alpha_t(spec.alpha, t);
  std::size_t joint = 0;
  for (std::size_t g = 0; g < designs; ++g) {
    const ConfseqDesign des = make_confseq_design(spec, derive_seed(spec.seed, 2000 + g));
    const std::size_t n = des.steps[0].size();
    std::vector<std::vector<double>> coef(T);
    std::vector<double> half(T), target(T);
    std::vector<bool> degenerate(T, false);
    for (std::size_t t = 0; t < T; ++t) {
      const Dataset& d = des.steps[t];
      const OverlapPartition part = partition(d, spec.epsilon);
      double tw = 0.0;
      for (std::size_t i = 0; i < n; ++i) tw += part.w[i] * (des.f(static_cast<Eigen::Index>(i), 1) - des.f(static_cast<Eigen::Index>(i), 0));
      target[t] = tw;
      if (part.all_overlap()) {
        degenerate[t] = true;
        continue;
      }
      const ModulusProblem pr = ModulusProblem::make(d, part.w, spec.L);
      const DeltaSearch s = optimize_delta(pr, alpha_t(spec.alpha, t + 1));
      coef[t] = estimator_coefficients(s.solution, pr);
      half[t] = s.half_length;
      out.mean_length[t] += 2.0 * s.half_length / static_cast<double>(designs);
    }
    Rng rng(derive_seed(spec.seed, 3000 + g));
    std::normal_distribution<double> N(0.0, 1.0);
    for (std::size_t r = 0; r < noise_reps; ++r) {
      // noise[k][i]: noise of unit i in its k-th collection (k = 0 initial)
      std::vector<double> e0(n), e1(n);
      for (std::size_t i = 0; i < n; ++i) {
        e0[i] = N(rng) * des.steps[0].sigma[i];
        e1[i] = N(rng) * des.steps[0].sigma[i];
      }
      bool all = true;
      for (std::size_t t = 0; t < T; ++t) {
        bool cov;
        if (degenerate[t]) {
          cov = target[t] == 0.0;
        } else {
          const Dataset& d = des.steps[t];
          double est = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            const double y = des.f(ii, d.z[i]) + (des.resampled_at[t][i] > 0 ? e1[i] : e0[i]);
            est += coef[t][i] * y;
          }
          cov = std::abs(est - target[t]) <= half[t];
        }
        if (cov) out.step_coverage[t] += 1.0;
        all = all && cov;
      }
      if (all) ++joint;
    }
  }
  out.reps = designs * noise_reps;
  const double k = static_cast<double>(out.reps);
  out.joint_coverage = static_cast<double>(joint) / k;
  for (double& c : out.step_coverage) c /= k;
  return out;
}

// One confidence sequence on a single design with simulated outcomes.
inline ConfidenceSequence run_confseq(const ConfseqSpec& spec) {
  const ConfseqDesign des = make_confseq_design(spec, derive_seed(spec.seed, 4000));
  Rng rng(derive_seed(spec.seed, 4001));
  std::normal_distribution<double> N(0.0, 1.0);
  const std::size_t n = des.steps[0].size();
  std::vector<double> e0(n), e1(n);
  for (std::size_t i = 0; i < n; ++i) {
    e0[i] = N(rng) * des.steps[0].sigma[i];
    e1[i] = N(rng) * des.steps[0].sigma[i];
  }
  std::vector<SequenceStep> steps;
  for (std::size_t t = 0; t < des.steps.size(); ++t) {
    const Dataset& d = des.steps[t];
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i)
      y[i] = des.f(static_cast<Eigen::Index>(i), d.z[i]) + (des.resampled_at[t][i] > 0 ? e1[i] : e0[i]);
    steps.push_back({ModulusProblem::make(d, partition(d, spec.epsilon).w, spec.L), std::move(y)});
  }
  return confidence_sequence(steps, spec.alpha);
}

}  // namespace overlap
