#pragma once
// Independent reference computations and random instances shared by the test binaries.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "overlap/modulus.hpp"

namespace overlap::testing {

inline void ensure_both_arms(Dataset& d) {
  d.z[0] = 0;
  d.z[1] = 1;
}

// x uniform on the unit cube, z ~ Bernoulli(1/2), weight 1/n on units with pi outside [0.1, 0.9].
inline ModulusProblem random_problem(std::mt19937_64& g, std::size_t n, std::size_t dim, double L) {
  std::uniform_real_distribution<double> U(0, 1);
  Dataset d;
  d.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  std::vector<double> w(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < dim; ++k) d.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = U(g);
    d.z.push_back(U(g) < 0.5);
    d.y.push_back(0.0);
    d.pi.push_back(0.01 + 0.98 * U(g));
    d.sigma.push_back(0.5 + U(g));
  }
  ensure_both_arms(d);
  d.pi[0] = 0.02;
  for (std::size_t i = 0; i < n; ++i)
    if (d.pi[i] < 0.1 || d.pi[i] > 0.9) w[i] = 1.0 / static_cast<double>(n);
  return ModulusProblem::make(std::move(d), std::move(w), L);
}

// 1-D, w = 0 exactly on units with x <= 0.3.
inline ModulusProblem random_two_cluster(std::mt19937_64& g, std::size_t n) {
  std::uniform_real_distribution<double> U(0, 1);
  Dataset d;
  d.x.resize(static_cast<Eigen::Index>(n), 1);
  std::vector<double> w(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    d.x(static_cast<Eigen::Index>(i), 0) = U(g);
    d.z.push_back(U(g) < 0.5);
    d.y.push_back(0.0);
    d.pi.push_back(0.5);
    d.sigma.push_back(0.5 + U(g));
  }
  ensure_both_arms(d);
  d.x(0, 0) = 0.1;
  d.x(1, 0) = 0.2;
  d.x(2, 0) = 0.8;
  for (std::size_t i = 0; i < n; ++i)
    if (d.x(static_cast<Eigen::Index>(i), 0) > 0.3) w[i] = 1.0 / static_cast<double>(n);
  return ModulusProblem::make(std::move(d), std::move(w), 1.0 + 3.0 * U(g));
}

struct SmallInstance {
  Dataset data;
  std::vector<double> w;
  double L = 1.0;
  double delta = 1.0;
  ModulusProblem problem() const { return ModulusProblem::make(data, w, L); }
};

inline SmallInstance random_small_instance(std::mt19937_64& g) {
  std::uniform_real_distribution<double> U(0, 1);
  const std::size_t n = 2 + static_cast<std::size_t>(U(g) * 3.0);
  const std::size_t dim = U(g) < 0.5 ? 1 : 2;
  SmallInstance s;
  s.data.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < dim; ++k) s.data.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = U(g);
    s.data.z.push_back(U(g) < 0.5);
    s.data.y.push_back(0.0);
    s.data.pi.push_back(0.5);
    s.data.sigma.push_back(0.5 + U(g));
  }
  ensure_both_arms(s.data);
  s.w.assign(n, 1.0 / static_cast<double>(n));
  s.L = 0.5 + 2.5 * U(g);
  s.delta = 0.2 + 1.8 * U(g);
  return s;
}

// Exhaustive grid search with shrinking refinement over the observed values g_i = f(x_i, z_i).
// For fixed g the best counterfactuals are the largest (arm 1) and smallest (arm 0) L-Lipschitz
// extensions, so the modulus reduces to a concave maximisation in n <= 4 variables. Grid points
// are mapped into the feasible set by radial scaling (the origin is feasible).
inline double brute_force_modulus(const ModulusProblem& pr, double delta) {
  const Dataset& d = pr.dataset;
  const std::size_t n = d.size();
  const double L = pr.lip.L;
  const double r = delta / 2.0;
  auto D = [&](std::size_t i, std::size_t j) {
    return pr.lip.dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  };
  auto lipschitz_ok = [&](const std::vector<double>& gv) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (d.z[i] == d.z[j] && gv[i] - gv[j] > L * D(i, j) + 1e-15) return false;
    return true;
  };
  auto value = [&](const std::vector<double>& u) {
    double norm = 0.0;
    for (double v : u) norm += v * v;
    norm = std::sqrt(norm);
    double t = norm > r ? r / norm : 1.0;
    std::vector<double> gv(n);
    auto fill = [&](double s) {
      for (std::size_t i = 0; i < n; ++i) gv[i] = s * u[i] * d.sigma[i];
    };
    fill(t);
    if (!lipschitz_ok(gv)) {
      double lo = 0.0, hi = t;
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        fill(mid);
        (lipschitz_ok(gv) ? lo : hi) = mid;
      }
      fill(lo);
    }
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double f1 = gv[i], f0 = gv[i];
      if (d.z[i] == 1) {
        f0 = -INFINITY;
        for (std::size_t j = 0; j < n; ++j)
          if (d.z[j] == 0) f0 = std::max(f0, gv[j] - L * D(i, j));
      } else {
        f1 = INFINITY;
        for (std::size_t j = 0; j < n; ++j)
          if (d.z[j] == 1) f1 = std::min(f1, gv[j] + L * D(i, j));
      }
      obj += 2.0 * pr.w[i] * (f1 - f0);
    }
    return obj;
  };

  std::vector<double> best(n, 0.0);
  double best_v = value(best);
  double h = r / 10.0;
  int pts = 21;
  std::vector<double> center(n, 0.0);
  for (int round = 0; round < 25; ++round) {
    std::vector<int> idx(n, 0);
    const int half = pts / 2;
    std::vector<double> u(n);
    while (true) {
      for (std::size_t k = 0; k < n; ++k) u[k] = center[k] + h * (idx[k] - half);
      const double v = value(u);
      if (v > best_v) {
        best_v = v;
        best = u;
      }
      std::size_t k = 0;
      while (k < n && ++idx[k] == pts) idx[k++] = 0;
      if (k == n) break;
    }
    center = best;
    pts = 11;
    h *= 0.4;
  }
  return best_v;
}

}  // namespace overlap::testing
