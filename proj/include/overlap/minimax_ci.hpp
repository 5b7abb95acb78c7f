#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "overlap/core_data.hpp"
#include "overlap/errors.hpp"
#include "overlap/modulus.hpp"
#include "overlap/normal.hpp"

namespace overlap {

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  double alpha = 0.05;

  double length() const { return upper - lower; }
};

struct IntervalReport {
  double estimate = 0.0;
  double maxbias = 0.0;
  double sd = 0.0;
  double cv = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double delta_star = 0.0;
  double alpha = 0.05;
  double omega = 0.0;
  double omega_prime = 0.0;
  double weight_sum = 0.0;
  bool degenerate = false;        // empty estimand: interval is the point {0}
  bool bracket_warning = false;   // delta search could not bracket an interior minimum
  int solves = 0;

  double half_length() const { return cv * sd; }
  double length() const { return upper - lower; }
  Interval interval() const { return {lower, upper, alpha}; }
};

// Coefficients a_i of the affine estimator sum_i a_i y_i at the solved delta.
inline std::vector<double> estimator_coefficients(const ModulusSolution& sol, const ModulusProblem& pr) {
  if (!(sol.delta > 0.0)) throw InputError("estimator_coefficients: solution has no delta");
  const std::size_t n = pr.dataset.size();
  std::vector<double> a(n);
  const double scale = 2.0 * sol.omega_prime / sol.delta;
  for (std::size_t i = 0; i < n; ++i) {
    const double s2 = pr.dataset.sigma[i] * pr.dataset.sigma[i];
    a[i] = scale * sol.f(i, pr.dataset.z[i]) / s2;
  }
  return a;
}

// tau_hat_delta = sum_i (2 omega'/delta) f*(x_i,z_i)/sigma_i^2 y_i, checked against the
// normalized form sum(w) * sum_i (f*/sigma^2) y_i / sum_{z_j=1} f*_j/sigma_j^2.
inline double estimator_value(const ModulusSolution& sol, const ModulusProblem& pr, const std::vector<double>& y) {
  const std::size_t n = pr.dataset.size();
  if (y.size() != n) throw InputError("estimator_value: outcome length differs from dataset size");
  const std::vector<double> a = estimator_coefficients(sol, pr);
  double first = 0.0, mag = 0.0, num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    first += a[i] * y[i];
    mag += std::abs(a[i] * y[i]);
    const double g = sol.f(i, pr.dataset.z[i]) / (pr.dataset.sigma[i] * pr.dataset.sigma[i]);
    num += g * y[i];
    if (pr.dataset.z[i] == 1) den += g;
  }
  if (den == 0.0) throw DegenerateProblem("estimator_value: solution carries no treated mass");
  const double second = pr.weight_sum() * num / den;
  if (std::abs(first - second) > 1e-8 * std::max(1.0, mag))
    throw SolverError("estimator_value: the two estimator forms disagree", std::abs(first - second));
  return first;
}

// (omega - delta omega') / 2, clipped at zero for round-off.
inline double maxbias(const ModulusSolution& sol) {
  const double v = 0.5 * (sol.omega - sol.delta * sol.omega_prime);
  if (v >= 0.0) return v;
  if (v >= -1e-9 * std::max(1.0, std::abs(sol.omega))) return 0.0;
  throw SolverError("maxbias: negative worst-case bias " + std::to_string(v), -v);
}

struct DeltaEval {
  double delta = 0.0;
  double maxbias = 0.0;
  double sd = 0.0;
  double cv = 0.0;
  double half = 0.0;  // cv * sd
};

inline DeltaEval evaluate_delta(const ModulusSolution& sol, double alpha) {
  DeltaEval e;
  e.delta = sol.delta;
  e.maxbias = maxbias(sol);
  e.sd = sol.omega_prime;
  if (!(e.sd > 0.0)) throw SolverError("evaluate_delta: nonpositive standard deviation", 0.0);
  e.cv = cv_quantile(e.maxbias / e.sd, alpha);
  e.half = e.cv * e.sd;
  return e;
}

struct DeltaSearchOptions {
  double lo_factor = 1e-3;   // delta_lo = lo_factor * sqrt(n) * min sigma
  int rises = 3;             // stop doubling after this many increases of G with no decrease between
  int flat_doublings = 20;   // G unchanged over this many doublings is taken as constant
  int max_doublings = 80;
  double log_tol = 1e-3;     // golden-section stop on the log-delta bracket width
};

struct DeltaSearch {
  double delta_star = 0.0;
  double half_length = 0.0;
  bool bracket_warning = false;
  int solves = 0;
  ModulusSolution solution;
  DeltaEval eval;
};

// Minimise G(delta) = cv_alpha(maxbias/sd) * sd: doubling grid from delta_lo, then golden
// section in log(delta) around the best grid point. G is not known to be unimodal, so this is
// an approximate global search.
inline DeltaSearch optimize_delta(const ModulusProblem& pr, double alpha, const DeltaSearchOptions& o = {}) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("optimize_delta: alpha must lie in (0,1)");
  const ModulusPlan plan = make_modulus_plan(pr);
  DeltaSearch out;
  struct Point {
    double delta;
    double g;
  };
  ModulusSolution best_sol;
  DeltaEval best_eval;
  double best_g = std::numeric_limits<double>::infinity();
  auto G = [&](double delta) {
    ModulusSolution sol = solve_modulus(pr, plan, delta);
    ++out.solves;
    const DeltaEval e = evaluate_delta(sol, alpha);
    if (e.half < best_g) {
      best_g = e.half;
      best_sol = std::move(sol);
      best_eval = e;
    }
    return e.half;
  };
  // G is flat for small delta (the solution stops changing), so flat steps neither count as rises nor reset them
  auto rises = [](double prev, double cur) { return cur > prev * (1.0 + 1e-7); };
  auto falls = [](double prev, double cur) { return cur < prev * (1.0 - 1e-7); };

  const double min_sigma = *std::min_element(pr.dataset.sigma.begin(), pr.dataset.sigma.end());
  const double lo = o.lo_factor * std::sqrt(static_cast<double>(pr.dataset.size())) * min_sigma;
  std::vector<Point> grid{{lo, G(lo)}};
  int up = 0, still = 0;
  bool constant = false;
  for (int k = 0; k < o.max_doublings && up < o.rises; ++k) {
    const double d = grid.back().delta * 2.0;
    grid.push_back({d, G(d)});
    const double prev = grid[grid.size() - 2].g, cur = grid.back().g;
    if (rises(prev, cur)) ++up;
    else if (falls(prev, cur)) up = 0;
    still = rises(prev, cur) || falls(prev, cur) ? 0 : still + 1;
    if (still >= o.flat_doublings) {
      constant = true;
      break;
    }
  }
  if (up < o.rises && !constant) out.bracket_warning = true;
  std::size_t ib = 0;
  for (std::size_t r = 1; r < grid.size(); ++r)
    if (grid[r].g < grid[ib].g) ib = r;
  // minimum at delta_lo: keep halving while G falls
  if (ib == 0 && grid.size() > 1 && rises(grid[0].g, grid[1].g)) {
    int k = 0;
    for (; k < 40; ++k) {
      const double d = grid.front().delta / 2.0;
      const double g = G(d);
      grid.insert(grid.begin(), {d, g});
      if (!falls(grid[1].g, g)) break;
    }
    if (k == 40) out.bracket_warning = true;
    ib = 0;
    for (std::size_t r = 1; r < grid.size(); ++r)
      if (grid[r].g < grid[ib].g) ib = r;
  }

  if (!out.bracket_warning && grid.size() >= 2) {
    double a = std::log(grid[ib > 0 ? ib - 1 : ib].delta);
    double b = std::log(grid[std::min(ib + 1, grid.size() - 1)].delta);
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
    double g1 = G(std::exp(x1)), g2 = G(std::exp(x2));
    while (b - a > o.log_tol) {
      if (g1 <= g2) {
        b = x2;
        x2 = x1;
        g2 = g1;
        x1 = b - phi * (b - a);
        g1 = G(std::exp(x1));
      } else {
        a = x1;
        x1 = x2;
        g1 = g2;
        x2 = a + phi * (b - a);
        g2 = G(std::exp(x2));
      }
    }
  }
  out.delta_star = best_sol.delta;
  out.half_length = best_g;
  out.eval = best_eval;
  out.solution = std::move(best_sol);
  return out;
}

inline IntervalReport degenerate_report(double alpha) {
  IntervalReport r;
  r.alpha = alpha;
  r.degenerate = true;
  return r;
}

// Minimax interval for tau_w = sum_i w_i tau(x_i). The length depends on the design only.
inline IntervalReport minimax_interval(const ModulusProblem& pr, const std::vector<double>& y, double alpha,
                                       const DeltaSearchOptions& o = {}) {
  if (!(pr.weight_sum() > 0.0)) return degenerate_report(alpha);
  const DeltaSearch s = optimize_delta(pr, alpha, o);
  IntervalReport r;
  r.alpha = alpha;
  r.delta_star = s.delta_star;
  r.maxbias = s.eval.maxbias;
  r.sd = s.eval.sd;
  r.cv = s.eval.cv;
  r.omega = s.solution.omega;
  r.omega_prime = s.solution.omega_prime;
  r.weight_sum = pr.weight_sum();
  r.bracket_warning = s.bracket_warning;
  r.solves = s.solves;
  r.estimate = estimator_value(s.solution, pr, y);
  r.lower = r.estimate - r.cv * r.sd;
  r.upper = r.estimate + r.cv * r.sd;
  return r;
}

// MP_epsilon: minimax interval for tau_minus with weights (1/n) 1{q_i < epsilon}.
inline IntervalReport mp_interval(const Dataset& data, double epsilon, double L, double alpha,
                                  const std::vector<double>& y, const DeltaSearchOptions& o = {}) {
  const OverlapPartition part = partition(data, epsilon);
  if (part.all_overlap()) return degenerate_report(alpha);
  return minimax_interval(ModulusProblem::make(data, part.w, L), y, alpha, o);
}

inline IntervalReport mp_interval(const Dataset& data, double epsilon, double L, double alpha,
                                  const DeltaSearchOptions& o = {}) {
  return mp_interval(data, epsilon, L, alpha, data.y, o);
}

// M: the same construction with w_i = 1/n for every unit (full ATE).
inline IntervalReport m_interval(const Dataset& data, double L, double alpha, const DeltaSearchOptions& o = {}) {
  std::vector<double> w(data.size(), 1.0 / static_cast<double>(data.size()));
  return minimax_interval(ModulusProblem::make(data, std::move(w), L), data.y, alpha, o);
}

enum class TMode { endpoint_max, length };

inline double metric_T(const Interval& iv, TMode mode) {
  if (mode == TMode::length) return iv.upper - iv.lower;
  return std::max(std::abs(iv.lower), std::abs(iv.upper));
}

inline double metric_T(const IntervalReport& r, TMode mode) { return metric_T(r.interval(), mode); }

// Endpoint sums of two intervals at the same level; covers the sum of their targets with
// probability at least 1 - 2 * level.
inline Interval combine_intervals(const Interval& a, const Interval& b) {
  if (std::abs(a.alpha - b.alpha) > 1e-12 * std::max(a.alpha, b.alpha))
    throw InputError("combine_intervals: intervals are at different levels");
  return {a.lower + b.lower, a.upper + b.upper, 2.0 * a.alpha};
}

// alpha_t = 6 alpha / (pi^2 t^2), t >= 1; sums to alpha over t = 1, 2, ...
inline double alpha_t(double alpha, std::size_t t) {
  if (t == 0) throw InputError("alpha_t: steps are numbered from 1");
  const double tt = static_cast<double>(t);
  return 6.0 * alpha / (std::numbers::pi * std::numbers::pi * tt * tt);
}

struct SequenceStep {
  ModulusProblem problem;
  std::vector<double> y;
};

struct SequenceEntry {
  std::size_t t = 0;
  double estimate = 0.0;
  double maxbias = 0.0;
  double sd = 0.0;
  double alpha_t = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double delta_star = 0.0;
  bool degenerate = false;
};

struct ConfidenceSequence {
  double alpha = 0.05;
  std::vector<SequenceEntry> entries;
};

inline SequenceEntry sequence_entry(std::size_t t, const IntervalReport& r) {
  return {t, r.estimate, r.maxbias, r.sd, r.alpha, r.lower, r.upper, r.delta_star, r.degenerate};
}

// Step t uses the minimax interval at level alpha_t; errors are re-raised with the step index.
inline ConfidenceSequence confidence_sequence(const std::vector<SequenceStep>& steps, double alpha,
                                              const DeltaSearchOptions& o = {}) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("confidence_sequence: alpha must lie in (0,1)");
  ConfidenceSequence cs;
  cs.alpha = alpha;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const std::size_t t = k + 1;
    const std::string where = "confidence_sequence step " + std::to_string(t) + ": ";
    try {
      cs.entries.push_back(sequence_entry(t, minimax_interval(steps[k].problem, steps[k].y, alpha_t(alpha, t), o)));
    } catch (const SolverError& e) {
      throw SolverError(where + e.what(), e.duality_gap());
    } catch (const DegenerateProblem& e) {
      throw DegenerateProblem(where + e.what());
    } catch (const InputError& e) {
      throw InputError(where + e.what());
    }
  }
  return cs;
}

}  // namespace overlap
