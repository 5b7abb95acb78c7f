#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "overlap/minimax_ci.hpp"
#include "overlap/modulus.hpp"
#include "oracles.hpp"

using namespace overlap;
using namespace overlap::testing;

TEST(Toy, SolverMatchesClosedFormAcrossRegimes) {
  const ToyConfig cfg;
  const ModulusProblem pr = toy_problem(cfg);
  const double dc = toy_delta_c(cfg);
  std::vector<double> grid;
  for (int k = 0; k < 19; ++k) grid.push_back(dc * std::pow(10.0, -1.5 + 3.0 * k / 18.0));
  grid.push_back(dc);
  for (double delta : grid) {
    const ModulusSolution s = solve_modulus(pr, delta);
    const ToyOracle o = analytic_modulus_oracle(cfg, delta);
    EXPECT_NEAR(s.omega, o.omega, 1e-5 * o.omega) << "delta " << delta;
    EXPECT_NEAR(s.omega_prime, o.sd, 1e-5 * o.sd) << "delta " << delta;
    EXPECT_NEAR(maxbias(s), o.maxbias, 1e-5 * o.maxbias) << "delta " << delta;
    EXPECT_NEAR(s.omega_prime, o.omega_prime, 1e-5 * o.omega_prime);
  }
}

TEST(Toy, RegimeOneConstantTerm) {
  const ToyConfig cfg;
  // delta -> 0: omega -> (2k/(k+1)) 2L(2 xi + eta) = (20/11) 0.24
  const ToyOracle o = analytic_modulus_oracle(cfg, 1e-12);
  EXPECT_NEAR(o.omega, 20.0 / 11.0 * 0.24, 1e-9);
  EXPECT_EQ(o.regime, 1);
  const ToyOracle big = analytic_modulus_oracle(cfg, 1e6);
  EXPECT_EQ(big.regime, 2);
  const double k = cfg.k, n = cfg.n;
  EXPECT_NEAR(big.sd, 2.0 * std::sqrt(2.0) * k / ((k + 1.0) * std::sqrt(n * (k + 1.0))), 1e-9);
}

TEST(Toy, RejectsUnsupportedK) {
  ToyConfig cfg;
  cfg.k = 1.0;
  EXPECT_THROW(analytic_modulus_oracle(cfg, 1.0), InputError);
}

TEST(Toy, LayoutSizes) {
  const Dataset d = toy_layout(ToyConfig{});
  EXPECT_EQ(d.size(), 550u);
}

TEST(BruteForce, SmallInstancesMatch) {
  std::mt19937_64 g(2024);
  for (int rep = 0; rep < 10; ++rep) {
    const SmallInstance inst = random_small_instance(g);
    const ModulusProblem pr = inst.problem();
    const ModulusSolution s = solve_modulus(pr, inst.delta);
    const double oracle = brute_force_modulus(pr, inst.delta);
    EXPECT_NEAR(s.omega, oracle, 1e-4 * std::abs(oracle)) << "rep " << rep;
  }
}

TEST(Derivative, MatchesCentralDifference) {
  std::mt19937_64 g(77);
  for (int rep = 0; rep < 10; ++rep) {
    const SmallInstance inst = random_small_instance(g);
    const ModulusProblem pr = inst.problem();
    ModulusSolution s = solve_modulus(pr, inst.delta);
    const double h = 1e-4 * inst.delta;
    const double fd = (solve_modulus(pr, inst.delta + h).omega - solve_modulus(pr, inst.delta - h).omega) / (2 * h);
    EXPECT_NEAR(omega_derivative(s, pr), fd, 1e-3 * std::max(1.0, std::abs(fd)));
    EXPECT_NEAR(s.omega_prime, s.omega_prime_dual, 1e-6 * s.omega_prime);
  }
}

TEST(Solution, FeasibleAndComplementary) {
  std::mt19937_64 g(5);
  for (int dim : {1, 2}) {
    for (int rep = 0; rep < 5; ++rep) {
      const ModulusProblem pr = random_problem(g, 40, dim, 3.0);
      const double delta = 0.5 + rep;
      const ModulusSolution s = solve_modulus(pr, delta);
      double ball = 0.0;
      for (std::size_t i = 0; i < pr.dataset.size(); ++i)
        ball += std::pow(s.f(i, pr.dataset.z[i]) / pr.dataset.sigma[i], 2);
      EXPECT_LE(ball, delta * delta / 4.0 * (1 + 1e-8));
      EXPECT_NEAR(ball, delta * delta / 4.0, 1e-6 * delta * delta);
      const double scale = s.f_star.cwiseAbs().maxCoeff();
      for (std::size_t i = 0; i < pr.dataset.size(); ++i)
        for (std::size_t j = 0; j < pr.dataset.size(); ++j)
          for (int d = 0; d < 2; ++d)
            EXPECT_LE(s.f(i, d) - s.f(j, d), pr.lip.L * pr.lip.dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) + 1e-8 * scale);
      EXPECT_GT(s.mu, 0.0);
      EXPECT_GE(s.omega, 0.0);
      EXPECT_GE(s.omega_prime, 0.0);
      for (const auto& e : s.duals) EXPECT_LE(std::abs(e.lambda * e.slack), 1e-5 * std::max(1.0, s.omega));
      // objective value equals 2 sum w (f1 - f0)
      double obj = 0.0;
      for (std::size_t i = 0; i < pr.dataset.size(); ++i) obj += 2.0 * pr.w[i] * (s.f(i, 1) - s.f(i, 0));
      EXPECT_NEAR(obj, s.omega, 1e-10 * std::max(1.0, s.omega));
    }
  }
}

TEST(Solution, ConcaveAndNondecreasingInDelta) {
  std::mt19937_64 g(9);
  const ModulusProblem pr = random_problem(g, 60, 1, 5.0);
  std::vector<double> ds, om;
  for (double d = 0.05; d < 20; d *= 1.6) {
    ds.push_back(d);
    om.push_back(solve_modulus(pr, d).omega);
  }
  for (std::size_t k = 1; k < ds.size(); ++k) EXPECT_GE(om[k], om[k - 1] - 1e-9);
  for (std::size_t k = 1; k + 1 < ds.size(); ++k) {
    const double t = (ds[k] - ds[k - 1]) / (ds[k + 1] - ds[k - 1]);
    EXPECT_GE(om[k], (1 - t) * om[k - 1] + t * om[k + 1] - 1e-8 * om[k]);
  }
}

TEST(Solution, HomogeneousInWeights) {
  std::mt19937_64 g(10);
  ModulusProblem pr = random_problem(g, 30, 2, 2.0);
  const double a = solve_modulus(pr, 1.3).omega;
  for (double& w : pr.w) w *= 3.5;
  EXPECT_NEAR(solve_modulus(pr, 1.3).omega, 3.5 * a, 1e-7 * a);
}

TEST(Solution, ScaleEquivariance) {
  std::mt19937_64 g(11);
  const ModulusProblem pr = random_problem(g, 30, 2, 2.0);
  const double a = solve_modulus(pr, 0.9).omega;
  Dataset d = pr.dataset;
  d.x /= 4.0;
  const ModulusProblem scaled = ModulusProblem::make(d, pr.w, pr.lip.L * 4.0);
  EXPECT_NEAR(solve_modulus(scaled, 0.9).omega, a, 1e-7 * a);
}

TEST(Pruning, DoesNotChangeOmega) {
  std::mt19937_64 g(12);
  for (int dim : {1, 2, 3}) {
    const ModulusProblem pr = random_problem(g, dim == 1 ? 50 : 90, dim, 4.0);
    for (double delta : {0.2, 2.0}) {
      ModulusOptions full;
      full.prune = false;
      const double a = solve_modulus(pr, delta).omega;
      const double b = solve_modulus(pr, delta, full).omega;
      EXPECT_NEAR(a, b, 1e-7 * b) << "dim " << dim << " delta " << delta;
    }
  }
}

TEST(Solution, DuplicateCovariatesAndZeroL) {
  std::mt19937_64 g(13);
  ModulusProblem pr = random_problem(g, 20, 1, 3.0);
  Dataset d = pr.dataset;
  for (int i = 10; i < 20; ++i) d.x(i, 0) = d.x(i - 10, 0);
  const ModulusProblem dup = ModulusProblem::make(d, pr.w, 3.0);
  ModulusOptions full;
  full.prune = false;
  EXPECT_NEAR(solve_modulus(dup, 1.0).omega, solve_modulus(dup, 1.0, full).omega, 1e-7);
  // L = 0: constants per arm, omega = 2 sum(w) (a - b) with n1 a^2 + n0 b^2 <= delta^2/4 (sigma = 1)
  const ModulusProblem flat = ModulusProblem::make(pr.dataset, pr.w, 0.0);
  double n1 = 0, n0 = 0;
  for (std::size_t i = 0; i < pr.dataset.size(); ++i) {
    const double p = 1.0 / std::pow(pr.dataset.sigma[i], 2);
    (pr.dataset.z[i] ? n1 : n0) += p;
  }
  const double expected = 2.0 * pr.weight_sum() * 0.5 * std::sqrt(1.0 / n1 + 1.0 / n0);
  EXPECT_NEAR(solve_modulus(flat, 1.0).omega, expected, 1e-8 * expected);
  EXPECT_NEAR(maxbias(solve_modulus(flat, 1.0)), 0.0, 1e-9);
}

TEST(Solution, Errors) {
  std::mt19937_64 g(14);
  ModulusProblem pr = random_problem(g, 10, 1, 1.0);
  EXPECT_THROW(solve_modulus(pr, 0.0), InputError);
  EXPECT_THROW(solve_modulus(pr, -1.0), InputError);
  std::fill(pr.w.begin(), pr.w.end(), 0.0);
  EXPECT_THROW(solve_modulus(pr, 1.0), DegenerateProblem);
  ModulusProblem one_arm = random_problem(g, 10, 1, 1.0);
  std::fill(one_arm.dataset.z.begin(), one_arm.dataset.z.end(), 1);
  EXPECT_THROW(solve_modulus(one_arm, 1.0), DegenerateProblem);
  ModulusOptions tight;
  tight.max_iter = 1;
  EXPECT_THROW(solve_modulus(random_problem(g, 30, 2, 1.0), 1.0, tight), SolverError);
}

TEST(Solution, PlanReuseIsIdentical) {
  std::mt19937_64 g(15);
  const ModulusProblem pr = random_problem(g, 70, 2, 2.0);
  const ModulusPlan plan = make_modulus_plan(pr);
  for (double d : {0.3, 3.0}) EXPECT_EQ(solve_modulus(pr, plan, d).omega, solve_modulus(pr, d).omega);
}

TEST(Matching, RowSumsEqualWeights) {
  std::mt19937_64 g(16);
  for (int rep = 0; rep < 20; ++rep) {
    const int dim = rep % 2 + 1;
    const ModulusProblem pr = random_problem(g, 30 + rep, dim, 1.0 + rep % 5);
    const ModulusSolution s = solve_modulus(pr, 0.3 + 0.2 * rep);
    const Eigen::MatrixXd W = matching_weights(s, pr);
    for (std::size_t k = 0; k < pr.dataset.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      EXPECT_NEAR(W.row(kk).sum(), pr.w[k], 1e-6) << "rep " << rep << " unit " << k;
      for (std::size_t j = 0; j < pr.dataset.size(); ++j) {
        const double v = W(kk, static_cast<Eigen::Index>(j));
        EXPECT_GE(v, 0.0);
        if (v > 0.0) EXPECT_NE(pr.dataset.z[k], pr.dataset.z[j]);
      }
    }
  }
}

TEST(Matching, ZeroWeightRowsVanish) {
  std::mt19937_64 g(17);
  const ModulusProblem pr = random_problem(g, 25, 1, 2.0);
  const Eigen::MatrixXd W = matching_weights(solve_modulus(pr, 1.0), pr);
  for (std::size_t k = 0; k < pr.dataset.size(); ++k)
    if (pr.w[k] == 0.0) EXPECT_EQ(W.row(static_cast<Eigen::Index>(k)).cwiseAbs().sum(), 0.0);
}

// Leftmost non-overlap control in a 1-D design borrows only from treated units near the overlap edge.
TEST(Matching, LeftmostControlUsesNearbyTreated) {
  Dataset d;
  const std::vector<double> xs{0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95};
  const std::vector<int> zs{0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0};
  d.x.resize(static_cast<Eigen::Index>(xs.size()), 1);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    d.x(static_cast<Eigen::Index>(i), 0) = xs[i];
    d.z.push_back(zs[i]);
    d.y.push_back(0.0);
    d.pi.push_back(i < 2 ? 0.01 : 0.5);
    d.sigma.push_back(0.1);
  }
  const std::size_t n = xs.size();
  std::vector<double> w(n, 0.0);
  w[0] = w[1] = 1.0 / static_cast<double>(n);
  const ModulusProblem pr = ModulusProblem::make(d, w, 1.0);
  const Eigen::MatrixXd W = matching_weights(solve_modulus(pr, 0.2), pr);
  EXPECT_NEAR(W.row(0).sum(), w[0], 1e-9);
  double near = 0.0;
  for (std::size_t j = 0; j < n; ++j)
    if (zs[j] == 1 && xs[j] <= 0.3) near += W(0, static_cast<Eigen::Index>(j));
  EXPECT_GT(near, 0.0);
  EXPECT_EQ(W(0, 10), 0.0);  // treated unit at 0.9 is never used
}

TEST(Matching, RequiresPositiveMu) {
  std::mt19937_64 g(18);
  const ModulusProblem pr = random_problem(g, 10, 1, 1.0);
  ModulusSolution s = solve_modulus(pr, 1.0);
  s.mu = 0.0;
  EXPECT_THROW(matching_weights(s, pr), DegenerateProblem);
}

TEST(Monotone, RandomTwoClusterInstances) {
  std::mt19937_64 g(19);
  for (int rep = 0; rep < 20; ++rep) {
    const ModulusProblem pr = random_two_cluster(g, 30 + rep);
    EXPECT_TRUE(monotone_extrapolation_check(pr, 0.2 + 0.15 * rep, 1e-6)) << "rep " << rep;
  }
}

TEST(Monotone, SingleNonOverlapPointAndErrors) {
  std::mt19937_64 g(20);
  ModulusProblem pr = random_two_cluster(g, 20);
  // keep exactly one zero-weight unit
  std::size_t first = 0;
  for (std::size_t i = 0; i < pr.w.size(); ++i)
    if (pr.w[i] == 0.0) {
      first = i;
      break;
    }
  for (std::size_t i = 0; i < pr.w.size(); ++i)
    if (pr.w[i] == 0.0 && i != first) pr.w[i] = 0.01;
  // restore the two-cluster shape: the single zero-weight unit must be leftmost
  Dataset d = pr.dataset;
  d.x(static_cast<Eigen::Index>(first), 0) = d.x.col(0).minCoeff() - 1.0;
  const ModulusProblem one = ModulusProblem::make(d, pr.w, pr.lip.L);
  EXPECT_TRUE(monotone_extrapolation_check(one, 1.0));
  const ModulusProblem two_d = random_problem(g, 10, 2, 1.0);
  EXPECT_THROW(monotone_extrapolation_check(two_d, 1.0), InputError);
}

TEST(MaxFlow, Examples) {
  const Eigen::MatrixXd id = max_flow_matrix({1, 1}, {1, 1}, {{0, 0}, {1, 1}});
  EXPECT_EQ(id, Eigen::MatrixXd::Identity(2, 2));
  const Eigen::MatrixXd row = max_flow_matrix({2}, {1, 1}, {{0, 0}, {0, 1}});
  EXPECT_DOUBLE_EQ(row(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(row(0, 1), 1.0);
  try {
    max_flow_matrix({1, 1}, {0, 2}, {{0, 0}, {1, 1}});
    FAIL() << "expected infeasibility";
  } catch (const InfeasibleTransport& e) {
    EXPECT_NE(std::find(e.cut_rows().begin(), e.cut_rows().end(), 0u), e.cut_rows().end());
    EXPECT_LT(e.routed(), e.required());
  }
  EXPECT_THROW(max_flow_matrix({1}, {2}, {{0, 0}}), InputError);
}

TEST(MaxFlow, RandomBalancedSums) {
  std::mt19937_64 g(21);
  std::uniform_int_distribution<int> U(0, 9);
  for (int rep = 0; rep < 30; ++rep) {
    // build a feasible instance from a random sparse integer matrix
    const int m = 3 + rep % 5, n = 2 + rep % 6;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m, n);
    std::vector<std::pair<std::size_t, std::size_t>> E;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        if (U(g) < 5) {
          A(i, j) = U(g) / 4.0;
          E.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j)});
        }
    std::vector<double> p(m), q(n);
    for (int i = 0; i < m; ++i) p[i] = A.row(i).sum();
    for (int j = 0; j < n; ++j) q[j] = A.col(j).sum();
    const Eigen::MatrixXd B = max_flow_matrix(p, q, E);
    for (int i = 0; i < m; ++i) EXPECT_NEAR(B.row(i).sum(), p[i], 1e-9);
    for (int j = 0; j < n; ++j) EXPECT_NEAR(B.col(j).sum(), q[j], 1e-9);
    EXPECT_GE(B.minCoeff(), 0.0);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        if (B(i, j) != 0.0)
          EXPECT_NE(std::find(E.begin(), E.end(), std::make_pair(static_cast<std::size_t>(i), static_cast<std::size_t>(j))), E.end());
  }
}

TEST(Trace, WritesCsvRows) {
  std::mt19937_64 g(22);
  const ModulusProblem pr = random_problem(g, 10, 1, 1.0);
  std::ostringstream os;
  write_modulus_trace(os, {solve_modulus(pr, 0.5), solve_modulus(pr, 1.0)});
  const std::string s = os.str();
  EXPECT_EQ(s.rfind("delta,omega,omega_prime,mu\n", 0), 0u);
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 3);
}
