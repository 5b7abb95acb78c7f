#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "overlap/core_data.hpp"
#include "overlap/errors.hpp"
#include "overlap/lipschitz.hpp"
#include "overlap/minimax_ci.hpp"
#include "overlap/normal.hpp"

namespace overlap {

struct AsymptoticCI {
  double estimate = 0.0;
  double se = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double alpha = 0.05;
  std::optional<double> epsilon_used;
  std::size_t n_used = 0;

  double length() const { return upper - lower; }
  Interval interval() const { return {lower, upper, alpha}; }
};

namespace detail {

inline AsymptoticCI normal_ci(double estimate, double se, double alpha) {
  const double z = normal_quantile(1.0 - alpha / 2.0);
  AsymptoticCI ci;
  ci.estimate = estimate;
  ci.se = se;
  ci.alpha = alpha;
  ci.lower = estimate - z * se;
  ci.upper = estimate + z * se;
  return ci;
}

// Influence values psi_i of the AIPW estimator.
inline std::vector<double> aipw_scores(const Dataset& data, const Regressor& reg) {
  const std::size_t n = data.size();
  std::vector<double> psi(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = data.pi[i];
    if (!(p > 0.0 && p < 1.0))
      throw InputError("aipw: unit " + std::to_string(i) + " has propensity " + std::to_string(p) +
                       "; trim it before weighting");
    const Eigen::RowVectorXd xi = data.x.row(static_cast<Eigen::Index>(i));
    const double m1 = reg.predict(xi, 1);
    const double m0 = reg.predict(xi, 0);
    const double y = data.y[i];
    psi[i] = m1 - m0 + (data.z[i] == 1 ? (y - m1) / p : -(y - m0) / (1.0 - p));
  }
  return psi;
}

inline void mean_and_sd(const std::vector<double>& v, double& mean, double& sd) {
  const double n = static_cast<double>(v.size());
  mean = 0.0;
  for (double a : v) mean += a;
  mean /= n;
  double ss = 0.0;
  for (double a : v) ss += (a - mean) * (a - mean);
  sd = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
}

}  // namespace detail

// AIPW with the influence-function variance: se = sd(psi) / sqrt(n).
inline AsymptoticCI aipw(const Dataset& data, const Regressor& reg, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("aipw: alpha must lie in (0,1)");
  data.validate();
  const std::vector<double> psi = detail::aipw_scores(data, reg);
  double mean = 0.0, sd = 0.0;
  detail::mean_and_sd(psi, mean, sd);
  AsymptoticCI ci = detail::normal_ci(mean, sd / std::sqrt(static_cast<double>(psi.size())), alpha);
  ci.n_used = psi.size();
  return ci;
}

// AIPW on the overlap units, rescaled by n_+/n so it targets (1/n) sum_{S_i=1} tau(x_i).
// `reg` must already be fitted (normally on the overlap units).
inline AsymptoticCI aipw_partial(const Dataset& data, double epsilon, const Regressor& reg, double alpha) {
  const OverlapPartition part = partition(data, epsilon);
  const std::vector<std::size_t> idx = part.overlap_indices();
  if (idx.empty()) throw InputError("aipw_partial: overlap region is empty at epsilon " + std::to_string(epsilon));
  const Dataset kept = subset(data, idx);
  const AsymptoticCI inner = aipw(kept, reg, alpha);
  const double scale = static_cast<double>(idx.size()) / static_cast<double>(data.size());
  AsymptoticCI ci = detail::normal_ci(scale * inner.estimate, scale * inner.se, alpha);
  ci.epsilon_used = epsilon;
  ci.n_used = idx.size();
  return ci;
}

// Fits the regressor on the overlap units first.
inline AsymptoticCI aipw_partial(const Dataset& data, double epsilon, const RegressorFactory& fit, double alpha) {
  const OverlapPartition part = partition(data, epsilon);
  const std::vector<std::size_t> idx = part.overlap_indices();
  if (idx.empty()) throw InputError("aipw_partial: overlap region is empty at epsilon " + std::to_string(epsilon));
  const auto reg = fit(subset(data, idx));
  return aipw_partial(data, epsilon, *reg, alpha);
}

struct EpsilonChoice {
  double epsilon = 0.0;
  AsymptoticCI ci;
};

// Candidate with the shortest AIPW_partial interval; ties go to the smaller epsilon.
// Candidates whose overlap region cannot be fitted are skipped.
inline EpsilonChoice select_epsilon(const Dataset& data, std::vector<double> candidates, const RegressorFactory& fit,
                                    double alpha) {
  if (candidates.empty()) throw InputError("select_epsilon: empty candidate set");
  std::sort(candidates.begin(), candidates.end());
  std::optional<EpsilonChoice> best;
  std::string last_error;
  for (double eps : candidates) {
    try {
      AsymptoticCI ci = aipw_partial(data, eps, fit, alpha);
      if (!best || ci.length() < best->ci.length()) best = EpsilonChoice{eps, std::move(ci)};
    } catch (const InputError& e) {
      last_error = e.what();
    }
  }
  if (!best) throw InputError("select_epsilon: no feasible candidate (" + last_error + ")");
  return *best;
}

}  // namespace overlap
