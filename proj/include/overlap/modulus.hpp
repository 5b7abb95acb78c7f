#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include "overlap/core_data.hpp"
#include "overlap/errors.hpp"
#include "overlap/lipschitz.hpp"
#include "overlap/max_flow.hpp"

namespace overlap {

struct ModulusProblem {
  Dataset dataset;
  std::vector<double> w;
  LipschitzClass lip;

  static ModulusProblem make(Dataset data, std::vector<double> weights, double L) {
    ModulusProblem p;
    p.lip = LipschitzClass::from_covariates(L, data.x);
    p.dataset = std::move(data);
    p.w = std::move(weights);
    return p;
  }

  double weight_sum() const { return std::accumulate(w.begin(), w.end(), 0.0); }

  void validate() const {
    dataset.validate();
    const std::size_t n = dataset.size();
    if (w.size() != n) throw InputError("modulus: weight vector length differs from dataset size");
    for (double v : w)
      if (!(v >= 0.0) || !std::isfinite(v)) throw InputError("modulus: weights must be finite and >= 0");
    if (static_cast<std::size_t>(lip.dist.rows()) != n)
      throw InputError("modulus: distance matrix size differs from dataset size");
    if (!(weight_sum() > 0.0)) throw DegenerateProblem("modulus: weights sum to zero");
    const std::size_t nt = dataset.treated_count();
    if (nt == 0) throw DegenerateProblem("modulus: no treated units, f(x,1) is unidentified");
    if (nt == n) throw DegenerateProblem("modulus: no control units, f(x,0) is unidentified");
  }
};

// f(x_p, arm) - f(x_q, arm) <= bound, on unit indices.
struct DiffConstraint {
  std::size_t p = 0;
  std::size_t q = 0;
  int arm = 1;
  double bound = 0.0;
};

struct ModulusOptions {
  bool prune = true;
  std::vector<DiffConstraint> extra;
  std::optional<Eigen::MatrixXd> start;  // n x 2, strictly feasible when extra constraints are given
  int max_iter = 400;
  double gap_tol = 1e-11;     // target relative surrogate gap
  double accept_gap = 1e-7;   // relative gap still accepted when the iteration budget runs out
};

// Multiplier of one Lipschitz constraint f(site from, arm) - f(site to, arm) <= L * length.
struct EdgeDual {
  int arm = 0;
  std::size_t from = 0;
  std::size_t to = 0;
  double length = 0.0;
  double lambda = 0.0;
  double slack = 0.0;
};

struct BindingDual {
  int arm = 0;
  std::size_t from_unit = 0;
  std::size_t to_unit = 0;
  double value = 0.0;
};

struct ModulusSolution {
  double delta = 0.0;
  double omega = 0.0;
  double omega_prime = 0.0;
  double omega_prime_dual = 0.0;  // mu * delta / 2
  Eigen::MatrixXd f_star;         // n x 2, column d holds f(x_i, d)
  double mu = 0.0;
  double duality_gap = 0.0;
  int iterations = 0;

  std::vector<std::size_t> site_of;            // unit -> site
  std::vector<std::vector<std::size_t>> sites; // site -> units
  std::vector<EdgeDual> duals;                 // Lipschitz constraints kept by the solver

  double f(std::size_t i, int d) const { return f_star(static_cast<Eigen::Index>(i), d); }
};

namespace detail {

struct LinCon {
  std::size_t p, q;
  double b;
};

struct Qcqp {
  std::size_t nvar = 0;
  Eigen::VectorXd c;  // minimise c'x
  Eigen::VectorXd P;  // ball: sum P x^2 <= rhs
  double rhs = 0.0;
  std::vector<LinCon> lin;
};

struct IpmResult {
  Eigen::VectorXd x;
  double lam0 = 0.0;
  Eigen::VectorXd lam;
  Eigen::VectorXd slack;
  double gap = 0.0;
  int iters = 0;
};

// Newton system (B + u u') dx = r with B = diag + weighted graph Laplacian, solved by a
// Cholesky-type factorisation of B plus Sherman-Morrison.
class NewtonSystem {
 public:
  NewtonSystem(std::size_t nvar, const std::vector<LinCon>& lin) : n_(nvar), lin_(lin) {
    dense_ = nvar <= 160 || static_cast<double>(lin.size()) > 0.125 * static_cast<double>(nvar * nvar);
    if (!dense_) {
      trip_.reserve(nvar + 4 * lin.size());
    }
  }

  void assemble(const Eigen::VectorXd& diag, const Eigen::VectorXd& edge_w) {
    const auto N = static_cast<Eigen::Index>(n_);
    if (dense_) {
      dmat_ = diag.asDiagonal();
      for (std::size_t e = 0; e < lin_.size(); ++e) {
        const auto p = static_cast<Eigen::Index>(lin_[e].p), q = static_cast<Eigen::Index>(lin_[e].q);
        const double v = edge_w(static_cast<Eigen::Index>(e));
        dmat_(p, p) += v;
        dmat_(q, q) += v;
        dmat_(p, q) -= v;
        dmat_(q, p) -= v;
      }
      dllt_.compute(dmat_);
      if (dllt_.info() != Eigen::Success) throw SolverError("modulus: Newton matrix not positive definite", -1.0);
      return;
    }
    trip_.clear();
    for (Eigen::Index i = 0; i < N; ++i) trip_.emplace_back(i, i, diag(i));
    for (std::size_t e = 0; e < lin_.size(); ++e) {
      const auto p = static_cast<Eigen::Index>(lin_[e].p), q = static_cast<Eigen::Index>(lin_[e].q);
      const double v = edge_w(static_cast<Eigen::Index>(e));
      trip_.emplace_back(p, p, v);
      trip_.emplace_back(q, q, v);
      // lower triangle only for the factorisation; the product below symmetrises
      trip_.emplace_back(std::max(p, q), std::min(p, q), -v);
    }
    smat_.resize(N, N);
    smat_.setFromTriplets(trip_.begin(), trip_.end());
    if (!analyzed_) {
      ldlt_.analyzePattern(smat_);
      analyzed_ = true;
    }
    ldlt_.factorize(smat_);
    if (ldlt_.info() != Eigen::Success) throw SolverError("modulus: Newton matrix factorisation failed", -1.0);
  }

  Eigen::VectorXd solve_base(const Eigen::VectorXd& r) const {
    if (dense_) return dllt_.solve(r);
    return ldlt_.solve(r);
  }

  Eigen::VectorXd apply_base(const Eigen::VectorXd& v) const {
    if (dense_) return dmat_ * v;
    Eigen::VectorXd out = smat_.selfadjointView<Eigen::Lower>() * v;
    return out;
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& r, const Eigen::VectorXd& u) const {
    const Eigen::VectorXd z = solve_base(u);
    const double denom = 1.0 + u.dot(z);
    auto sm = [&](const Eigen::VectorXd& rhs) {
      const Eigen::VectorXd y = solve_base(rhs);
      return Eigen::VectorXd(y - z * (u.dot(y) / denom));
    };
    Eigen::VectorXd dx = sm(r);
    const Eigen::VectorXd res = r - apply_base(dx) - u * u.dot(dx);
    dx += sm(res);
    return dx;
  }

 private:
  std::size_t n_;
  const std::vector<LinCon>& lin_;
  bool dense_ = false;
  bool analyzed_ = false;
  Eigen::MatrixXd dmat_;
  Eigen::LLT<Eigen::MatrixXd> dllt_;
  std::vector<Eigen::Triplet<double>> trip_;
  Eigen::SparseMatrix<double> smat_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt_;
};

// Exact KKT solve on an active set guessed from an interior-point iterate: with the active
// constraints as equalities, x(mu) = u + v / mu and the ball equation is quadratic in 1/mu.
// Wrong guesses are corrected by dropping actives with negative multipliers and adding
// violated constraints. Accepted only if primal and dual feasible, hence optimal.
inline bool polish_kkt(const Qcqp& prob, double fscale, Eigen::VectorXd& x, double& lam0, Eigen::VectorXd& lam,
                       Eigen::VectorXd& s) {
  const std::size_t M = prob.lin.size();
  const auto N = static_cast<Eigen::Index>(prob.nvar);
  const double cmax = std::max(prob.c.cwiseAbs().maxCoeff(), 1e-300);
  const double xs = std::max(x.cwiseAbs().maxCoeff(), 1e-300);
  std::vector<char> in(M, 0);
  for (std::size_t e = 0; e < M; ++e) {
    const auto ee = static_cast<Eigen::Index>(e);
    if (lam(ee) / cmax >= s(ee) / xs) in[e] = 1;
  }

  for (int round = 0; round < 8; ++round) {
    // opposite directions of one pair cannot both bind at positive distance
    std::vector<std::pair<std::pair<std::size_t, std::size_t>, std::size_t>> keyed;
    for (std::size_t e = 0; e < M; ++e)
      if (in[e]) keyed.push_back({{std::min(prob.lin[e].p, prob.lin[e].q), std::max(prob.lin[e].p, prob.lin[e].q)}, e});
    std::sort(keyed.begin(), keyed.end());
    std::vector<std::size_t> act;
    for (std::size_t r = 0; r < keyed.size(); ++r) {
      if (r > 0 && keyed[r].first == keyed[r - 1].first) {
        const std::size_t e0 = act.back(), e1 = keyed[r].second;
        const double r0 = lam(static_cast<Eigen::Index>(e0)) / s(static_cast<Eigen::Index>(e0));
        const double r1 = lam(static_cast<Eigen::Index>(e1)) / s(static_cast<Eigen::Index>(e1));
        in[r1 > r0 ? e0 : e1] = 0;
        if (r1 > r0) act.back() = e1;
        continue;
      }
      act.push_back(keyed[r].second);
    }

    // components tied by active constraints that touch no ball term float freely; pin one
    // variable of each at its current value
    std::vector<std::size_t> parent(prob.nvar);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t v) {
      while (parent[v] != v) v = parent[v] = parent[parent[v]];
      return v;
    };
    for (std::size_t e : act) parent[find(prob.lin[e].p)] = find(prob.lin[e].q);
    std::vector<bool> anchored(prob.nvar, false);
    for (std::size_t v = 0; v < prob.nvar; ++v)
      if (prob.P(static_cast<Eigen::Index>(v)) != 0.0) anchored[find(v)] = true;
    std::vector<std::size_t> pins;
    for (std::size_t v = 0; v < prob.nvar; ++v)
      if (find(v) == v && !anchored[v]) pins.push_back(v);

    const auto A = static_cast<Eigen::Index>(act.size());
    const auto Z = static_cast<Eigen::Index>(pins.size());
    std::vector<Eigen::Triplet<double>> trip;
    for (Eigen::Index i = 0; i < N; ++i)
      if (prob.P(i) != 0.0) trip.emplace_back(i, i, 2.0 * prob.P(i));
    for (Eigen::Index r = 0; r < A; ++r) {
      const auto& c = prob.lin[act[static_cast<std::size_t>(r)]];
      trip.emplace_back(N + r, static_cast<Eigen::Index>(c.p), 1.0);
      trip.emplace_back(N + r, static_cast<Eigen::Index>(c.q), -1.0);
      trip.emplace_back(static_cast<Eigen::Index>(c.p), N + r, 1.0);
      trip.emplace_back(static_cast<Eigen::Index>(c.q), N + r, -1.0);
    }
    for (Eigen::Index r = 0; r < Z; ++r) {
      const auto v = static_cast<Eigen::Index>(pins[static_cast<std::size_t>(r)]);
      trip.emplace_back(N + A + r, v, 1.0);
      trip.emplace_back(v, N + A + r, 1.0);
    }
    Eigen::SparseMatrix<double> K(N + A + Z, N + A + Z);
    K.setFromTriplets(trip.begin(), trip.end());
    K.makeCompressed();
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(K);
    if (lu.info() != Eigen::Success) return false;
    Eigen::VectorXd rb = Eigen::VectorXd::Zero(N + A + Z), rc = Eigen::VectorXd::Zero(N + A + Z);
    for (Eigen::Index r = 0; r < A; ++r) rb(N + r) = prob.lin[act[static_cast<std::size_t>(r)]].b;
    for (Eigen::Index r = 0; r < Z; ++r) rb(N + A + r) = x(static_cast<Eigen::Index>(pins[static_cast<std::size_t>(r)]));
    rc.head(N) = -prob.c;
    const Eigen::VectorXd su = lu.solve(rb);
    const Eigen::VectorXd sv = lu.solve(rc);
    if (!su.allFinite() || !sv.allFinite()) return false;
    const Eigen::VectorXd u = su.head(N), v = sv.head(N);
    const double a2 = (prob.P.array() * v.array().square()).sum();
    const double b2 = 2.0 * (prob.P.array() * u.array() * v.array()).sum();
    const double c2 = (prob.P.array() * u.array().square()).sum() - prob.rhs;
    if (!(a2 > 0.0) || !(c2 < 0.0)) return false;
    const double r = (-b2 + std::sqrt(b2 * b2 - 4.0 * a2 * c2)) / (2.0 * a2);
    if (!(r > 0.0) || !std::isfinite(r)) return false;
    const double mu = 1.0 / r;
    const Eigen::VectorXd xn = u + r * v;
    const Eigen::VectorXd nu = mu * su.segment(N, A) + sv.segment(N, A);
    if (Z > 0 && (mu * su.tail(Z) + sv.tail(Z)).cwiseAbs().maxCoeff() > 1e-9 * cmax) return false;

    Eigen::VectorXd sn(static_cast<Eigen::Index>(M));
    for (std::size_t e = 0; e < M; ++e)
      sn(static_cast<Eigen::Index>(e)) =
          prob.lin[e].b - (xn(static_cast<Eigen::Index>(prob.lin[e].p)) - xn(static_cast<Eigen::Index>(prob.lin[e].q)));
    bool changed = false;
    for (Eigen::Index r2 = 0; r2 < A; ++r2)
      if (nu(r2) < -1e-9 * cmax) {
        in[act[static_cast<std::size_t>(r2)]] = 0;
        changed = true;
      }
    for (std::size_t e = 0; e < M; ++e)
      if (!in[e] && sn(static_cast<Eigen::Index>(e)) < -1e-12 * fscale) {
        in[e] = 1;
        changed = true;
      }
    if (changed) continue;

    const double obj_old = -prob.c.dot(x), obj_new = -prob.c.dot(xn);
    if (obj_new < obj_old - 1e-6 * std::max(std::abs(obj_old), 1e-300)) return false;
    x = xn;
    lam0 = mu;
    lam.setZero();
    s = sn.cwiseMax(0.0);
    for (Eigen::Index r2 = 0; r2 < A; ++r2) {
      const auto e = static_cast<Eigen::Index>(act[static_cast<std::size_t>(r2)]);
      lam(e) = std::max(nu(r2), 0.0);
      s(e) = 0.0;
    }
    return true;
  }
  return false;
}

// Primal-dual interior-point method for  min c'x  s.t.  sum P x^2 <= rhs,  x_p - x_q <= b.
// x0 must be strictly feasible. `fscale` is a typical magnitude of x used for scaling.
inline IpmResult solve_qcqp(const Qcqp& prob, Eigen::VectorXd x, double fscale, const ModulusOptions& opt) {
  const std::size_t M = prob.lin.size();
  const auto Me = static_cast<Eigen::Index>(M);
  const double mtot = static_cast<double>(M + 1);

  auto slacks = [&](const Eigen::VectorXd& xv, double& s0, Eigen::VectorXd& s) {
    s0 = prob.rhs - (prob.P.array() * xv.array().square()).sum();
    s.resize(Me);
    for (std::size_t e = 0; e < M; ++e)
      s(static_cast<Eigen::Index>(e)) = prob.lin[e].b - (xv(static_cast<Eigen::Index>(prob.lin[e].p)) -
                                                         xv(static_cast<Eigen::Index>(prob.lin[e].q)));
  };
  auto dual_residual = [&](const Eigen::VectorXd& xv, double l0, const Eigen::VectorXd& l) {
    Eigen::VectorXd r = prob.c + 2.0 * l0 * (prob.P.array() * xv.array()).matrix();
    for (std::size_t e = 0; e < M; ++e) {
      const double v = l(static_cast<Eigen::Index>(e));
      r(static_cast<Eigen::Index>(prob.lin[e].p)) += v;
      r(static_cast<Eigen::Index>(prob.lin[e].q)) -= v;
    }
    return r;
  };

  double s0 = 0.0;
  Eigen::VectorXd s;
  slacks(x, s0, s);
  if (!(s0 > 0.0) || (M > 0 && !(s.minCoeff() > 0.0)))
    throw InputError("modulus: starting point is not strictly feasible");

  const double cnorm = prob.c.norm();
  const double theta = std::max(cnorm * fscale / mtot, 1e-300);
  // the ball multiplier starts at full scale; theta / s0 leaves the Newton matrix near-singular
  // when there are thousands of Lipschitz rows
  double lam0 = std::max(theta, cnorm * fscale) / s0;
  Eigen::VectorXd lam = theta * s.cwiseInverse();

  NewtonSystem sys(prob.nvar, prob.lin);
  IpmResult out;
  double gap = 0.0, rdual_norm = 0.0;
  int it = 0, stalled = 0;
  Eigen::VectorXd edge_w(Me), gdx(Me), dlam(Me);
  for (; it < opt.max_iter; ++it) {
    gap = lam0 * s0 + lam.dot(s);
    rdual_norm = dual_residual(x, lam0, lam).norm();
    const double obj = std::max(std::abs(prob.c.dot(x)), 1e-300);
    if (gap <= opt.gap_tol * obj && rdual_norm <= 1e-9 * cnorm) break;
    if (gap <= 1e-7 * obj && rdual_norm <= 1e-7 * cnorm && (it % 2 == 0 || stalled > 0)) {
      Eigen::VectorXd xp = x, lp = lam, sp = s;
      double l0p = lam0;
      if (polish_kkt(prob, fscale, xp, l0p, lp, sp)) {
        out.x = std::move(xp);
        out.lam0 = l0p;
        out.lam = std::move(lp);
        out.slack = std::move(sp);
        out.gap = 0.0;
        out.iters = it;
        return out;
      }
    }

    const Eigen::VectorXd g0 = 2.0 * (prob.P.array() * x.array()).matrix();
    for (Eigen::Index e = 0; e < Me; ++e) edge_w(e) = lam(e) / s(e);
    sys.assemble(2.0 * lam0 * prob.P, edge_w);
    const Eigen::VectorXd u = g0 * std::sqrt(lam0 / s0);

    // Newton direction for the centring target lambda_i s_i = inv_t
    double dlam0 = 0.0;
    auto direction = [&](double inv_t) {
      Eigen::VectorXd rhs = -prob.c - inv_t * g0 / s0;
      for (std::size_t e = 0; e < M; ++e) {
        const double v = inv_t / s(static_cast<Eigen::Index>(e));
        rhs(static_cast<Eigen::Index>(prob.lin[e].p)) -= v;
        rhs(static_cast<Eigen::Index>(prob.lin[e].q)) += v;
      }
      Eigen::VectorXd dx = sys.solve(rhs, u);
      dlam0 = (lam0 * g0.dot(dx) - (lam0 * s0 - inv_t)) / s0;
      for (std::size_t e = 0; e < M; ++e) {
        const auto ee = static_cast<Eigen::Index>(e);
        gdx(ee) = dx(static_cast<Eigen::Index>(prob.lin[e].p)) - dx(static_cast<Eigen::Index>(prob.lin[e].q));
        dlam(ee) = (lam(ee) * gdx(ee) - (lam(ee) * s(ee) - inv_t)) / s(ee);
      }
      return dx;
    };
    // largest step keeping duals nonnegative and the primal strictly feasible
    auto max_step = [&](const Eigen::VectorXd& dx) {
      double smax = 1.0;
      if (dlam0 < 0.0) smax = std::min(smax, -lam0 / dlam0);
      for (Eigen::Index e = 0; e < Me; ++e) {
        if (dlam(e) < 0.0) smax = std::min(smax, -lam(e) / dlam(e));
        if (gdx(e) > 0.0) smax = std::min(smax, s(e) / gdx(e));
      }
      const double a = (prob.P.array() * dx.array().square()).sum();
      const double b = g0.dot(dx);
      if (a > 0.0) smax = std::min(smax, (-b + std::sqrt(b * b + 4.0 * a * s0)) / (2.0 * a));
      else if (b > 0.0) smax = std::min(smax, s0 / b);
      return smax;
    };

    // predictor: pure Newton step on the KKT conditions sets the centring weight
    const Eigen::VectorXd dx_aff = direction(0.0);
    const double a_aff = max_step(dx_aff);
    double gap_aff = (lam0 + a_aff * dlam0) * std::max(s0 - a_aff * g0.dot(dx_aff), 0.0);
    for (Eigen::Index e = 0; e < Me; ++e)
      gap_aff += (lam(e) + a_aff * dlam(e)) * std::max(s(e) - a_aff * gdx(e), 0.0);
    const double sigma = std::clamp(std::pow(gap_aff / gap, 3.0), 1e-6, 0.5);
    const double inv_t = sigma * gap / mtot;

    const Eigen::VectorXd dx = direction(inv_t);
    const double smax = max_step(dx);
    double step = 0.99 * smax;

    auto resid_norm = [&](const Eigen::VectorXd& xv, double l0, const Eigen::VectorXd& l, double& ns0,
                          Eigen::VectorXd& ns) {
      slacks(xv, ns0, ns);
      const Eigen::VectorXd r = dual_residual(xv, l0, l);
      double sq = r.squaredNorm();
      const double c0 = l0 * ns0 - inv_t;
      sq += c0 * c0;
      sq += ((l.array() * ns.array()) - inv_t).matrix().squaredNorm();
      return std::sqrt(sq);
    };
    double cs0;
    Eigen::VectorXd cs;
    const double r_now = resid_norm(x, lam0, lam, cs0, cs);
    Eigen::VectorXd xn, ln;
    double l0n = 0.0, ns0 = 0.0;
    Eigen::VectorXd ns;
    for (int bt = 0; bt < 60; ++bt) {
      xn = x + step * dx;
      l0n = lam0 + step * dlam0;
      ln = lam + step * dlam;
      const double r_new = resid_norm(xn, l0n, ln, ns0, ns);
      if (ns0 > 0.0 && (M == 0 || ns.minCoeff() > 0.0) && r_new <= (1.0 - 0.01 * step) * r_now) break;
      step *= 0.5;
    }
    if (!(ns0 > 0.0) || (M > 0 && !(ns.minCoeff() > 0.0))) break;
    x = xn;
    lam0 = l0n;
    lam = ln;
    s0 = ns0;
    s = ns;
    stalled = step < 1e-3 ? stalled + 1 : 0;
    if (stalled >= 8 || step < 1e-14) break;
  }
  gap = lam0 * s0 + lam.dot(s);
  const double obj = std::abs(prob.c.dot(x));
  double rel = gap / std::max(obj, 1e-300);
  rdual_norm = dual_residual(x, lam0, lam).norm();
  if (polish_kkt(prob, fscale, x, lam0, lam, s)) {
    rel = 0.0;
    rdual_norm = 0.0;
  }
  if (!(rel <= opt.accept_gap) || !(rdual_norm <= 1e-6 * std::max(cnorm, 1e-300)))
    throw SolverError("modulus: interior-point method did not converge (relative gap " + std::to_string(rel) +
                          ", dual residual " + std::to_string(rdual_norm) + ")",
                      rel);
  out.x = std::move(x);
  out.lam0 = lam0;
  out.lam = std::move(lam);
  out.slack = std::move(s);
  out.gap = rel;
  out.iters = it;
  return out;
}

inline void group_sites(const ModulusProblem& pr, std::vector<std::size_t>& site_of,
                        std::vector<std::vector<std::size_t>>& sites) {
  const std::size_t n = pr.dataset.size();
  site_of.assign(n, std::numeric_limits<std::size_t>::max());
  sites.clear();
  if (pr.lip.L == 0.0) {
    sites.emplace_back(n);
    std::iota(sites[0].begin(), sites[0].end(), 0);
    std::fill(site_of.begin(), site_of.end(), 0);
    return;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (site_of[i] != std::numeric_limits<std::size_t>::max()) continue;
    site_of[i] = sites.size();
    sites.push_back({i});
    for (std::size_t j = i + 1; j < n; ++j)
      if (site_of[j] == std::numeric_limits<std::size_t>::max() &&
          pr.lip.dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) == 0.0) {
        site_of[j] = site_of[i];
        sites.back().push_back(j);
      }
  }
}

struct SitePair {
  std::size_t a, b;
};

// Sites ordered along a line when the distance matrix is additive along that order.
inline std::optional<std::vector<SitePair>> chain_edges(const ModulusProblem& pr,
                                                        const std::vector<std::vector<std::size_t>>& sites) {
  if (pr.dataset.dim() != 1) return std::nullopt;
  const std::size_t m = sites.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pr.dataset.x(static_cast<Eigen::Index>(sites[a][0]), 0) < pr.dataset.x(static_cast<Eigen::Index>(sites[b][0]), 0);
  });
  auto D = [&](std::size_t a, std::size_t b) {
    return pr.lip.dist(static_cast<Eigen::Index>(sites[a][0]), static_cast<Eigen::Index>(sites[b][0]));
  };
  std::vector<double> cum(m, 0.0);
  for (std::size_t r = 1; r < m; ++r) cum[r] = cum[r - 1] + D(order[r - 1], order[r]);
  const double tol = 1e-12 * std::max(cum.empty() ? 0.0 : cum.back(), 1e-300);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = r + 1; c < m; ++c)
      if (std::abs(D(order[r], order[c]) - (cum[c] - cum[r])) > tol) return std::nullopt;
  std::vector<SitePair> out;
  for (std::size_t r = 1; r < m; ++r) out.push_back({order[r - 1], order[r]});
  return out;
}

inline std::vector<SitePair> all_pairs(std::size_t m) {
  std::vector<SitePair> out;
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = a + 1; b < m; ++b) out.push_back({a, b});
  return out;
}

// Nearest-neighbour graph plus a minimum spanning tree (keeps every arm connected).
inline std::vector<SitePair> sparse_seed_edges(const Eigen::MatrixXd& sd, std::size_t knn) {
  const std::size_t m = static_cast<std::size_t>(sd.rows());
  std::vector<std::vector<bool>> has(m, std::vector<bool>(m, false));
  std::vector<SitePair> out;
  auto add = [&](std::size_t a, std::size_t b) {
    if (a == b || has[a][b]) return;
    has[a][b] = has[b][a] = true;
    out.push_back({std::min(a, b), std::max(a, b)});
  };
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t a = 0; a < m; ++a) {
    cand.clear();
    for (std::size_t b = 0; b < m; ++b)
      if (b != a) cand.emplace_back(sd(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)), b);
    const std::size_t k = std::min(knn, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t r = 0; r < k; ++r) add(a, cand[r].second);
  }
  // Prim
  std::vector<bool> in(m, false);
  std::vector<double> best(m, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> from(m, 0);
  best[0] = 0.0;
  for (std::size_t it = 0; it < m; ++it) {
    std::size_t u = m;
    for (std::size_t v = 0; v < m; ++v)
      if (!in[v] && (u == m || best[v] < best[u])) u = v;
    in[u] = true;
    if (it > 0) add(from[u], u);
    for (std::size_t v = 0; v < m; ++v) {
      const double dv = sd(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v));
      if (!in[v] && dv < best[v]) {
        best[v] = dv;
        from[v] = u;
      }
    }
  }
  return out;
}

inline std::size_t var_index(std::size_t site, int arm) { return 2 * site + static_cast<std::size_t>(arm); }

}  // namespace detail

// Delta-independent part of the program: merged sites, site distances and the kept Lipschitz pairs.
struct ModulusPlan {
  std::vector<std::size_t> site_of;
  std::vector<std::vector<std::size_t>> sites;
  Eigen::MatrixXd sd;
  std::vector<detail::SitePair> pairs;
  bool generate = false;  // pairs are a seed set, grown by constraint generation
  Eigen::VectorXd c;
  Eigen::VectorXd P;
  double diam = 0.0;
};

inline ModulusPlan make_modulus_plan(const ModulusProblem& pr, bool prune = true) {
  pr.validate();
  const std::size_t n = pr.dataset.size();
  ModulusPlan plan;
  detail::group_sites(pr, plan.site_of, plan.sites);
  const std::size_t m = plan.sites.size();
  plan.c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(2 * m));
  plan.P = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(2 * m));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t s = plan.site_of[i];
    plan.c(static_cast<Eigen::Index>(detail::var_index(s, 1))) -= 2.0 * pr.w[i];
    plan.c(static_cast<Eigen::Index>(detail::var_index(s, 0))) += 2.0 * pr.w[i];
    plan.P(static_cast<Eigen::Index>(detail::var_index(s, pr.dataset.z[i]))) +=
        1.0 / (pr.dataset.sigma[i] * pr.dataset.sigma[i]);
  }
  plan.sd.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = 0; b < m; ++b)
      plan.sd(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
          pr.lip.dist(static_cast<Eigen::Index>(plan.sites[a][0]), static_cast<Eigen::Index>(plan.sites[b][0]));
  if (m > 1) {
    std::optional<std::vector<detail::SitePair>> chain;
    if (prune) chain = detail::chain_edges(pr, plan.sites);
    if (chain) {
      plan.pairs = std::move(*chain);
    } else if (prune && m > 60) {
      plan.pairs = detail::sparse_seed_edges(plan.sd, 10);
      plan.generate = true;
    } else {
      plan.pairs = detail::all_pairs(m);
    }
    plan.diam = plan.sd.maxCoeff();
  }
  return plan;
}

// Maximise 2 sum_i w_i (f(x_i,1) - f(x_i,0)) over the finite-sample Lipschitz class subject to
// sum_i f(x_i,z_i)^2 / sigma_i^2 <= delta^2 / 4. `plan` must come from make_modulus_plan(pr).
inline ModulusSolution solve_modulus(const ModulusProblem& pr, const ModulusPlan& plan, double delta,
                                     const ModulusOptions& opt = {}) {
  if (!(delta > 0.0) || !std::isfinite(delta)) throw InputError("solve_modulus: delta must be positive");
  const std::size_t n = pr.dataset.size();
  if (plan.site_of.size() != n) throw InputError("solve_modulus: plan does not match the problem");
  const double L = pr.lip.L;

  ModulusSolution sol;
  sol.delta = delta;
  sol.site_of = plan.site_of;
  sol.sites = plan.sites;
  const std::size_t m = sol.sites.size();
  const Eigen::MatrixXd& sd = plan.sd;

  detail::Qcqp q;
  q.nvar = 2 * m;
  q.c = plan.c;
  q.P = plan.P;
  q.rhs = delta * delta / 4.0;
  std::vector<detail::SitePair> pairs = plan.pairs;
  const bool generate = plan.generate;
  const double fscale = delta / (2.0 * std::sqrt(q.P.sum())) + L * plan.diam;

  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(q.nvar));
  if (opt.start) {
    if (opt.start->rows() != static_cast<Eigen::Index>(n) || opt.start->cols() != 2)
      throw InputError("solve_modulus: start must be n x 2");
    for (std::size_t s = 0; s < m; ++s)
      for (int d = 0; d < 2; ++d)
        x0(static_cast<Eigen::Index>(detail::var_index(s, d))) =
            (*opt.start)(static_cast<Eigen::Index>(sol.sites[s][0]), d);
  }

  std::vector<detail::LinCon> extra;
  for (const auto& e : opt.extra) {
    if (e.p >= n || e.q >= n || (e.arm != 0 && e.arm != 1))
      throw InputError("solve_modulus: extra constraint out of range");
    const std::size_t sp = sol.site_of[e.p], sq = sol.site_of[e.q];
    if (sp == sq) {
      if (e.bound < 0.0) throw InputError("solve_modulus: extra constraint infeasible on a merged site");
      continue;
    }
    extra.push_back({detail::var_index(sp, e.arm), detail::var_index(sq, e.arm), e.bound});
  }

  detail::IpmResult res;
  std::size_t lip_count = 0;
  for (int round = 0;; ++round) {
    q.lin.clear();
    for (const auto& pe : pairs) {
      const double b = L * sd(static_cast<Eigen::Index>(pe.a), static_cast<Eigen::Index>(pe.b));
      for (int d = 0; d < 2; ++d) {
        q.lin.push_back({detail::var_index(pe.a, d), detail::var_index(pe.b, d), b});
        q.lin.push_back({detail::var_index(pe.b, d), detail::var_index(pe.a, d), b});
      }
    }
    lip_count = q.lin.size();
    q.lin.insert(q.lin.end(), extra.begin(), extra.end());
    res = detail::solve_qcqp(q, x0, fscale, opt);
    if (!generate) break;
    // add every violated pair and re-solve
    const double tol = 1e-10 * fscale;
    std::vector<std::vector<bool>> has(m, std::vector<bool>(m, false));
    for (const auto& pe : pairs) has[pe.a][pe.b] = has[pe.b][pe.a] = true;
    std::size_t added = 0;
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = a + 1; b < m; ++b) {
        if (has[a][b]) continue;
        const double lim = L * sd(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) + tol;
        for (int d = 0; d < 2; ++d) {
          const double diff = res.x(static_cast<Eigen::Index>(detail::var_index(a, d))) -
                              res.x(static_cast<Eigen::Index>(detail::var_index(b, d)));
          if (std::abs(diff) > lim) {
            pairs.push_back({a, b});
            ++added;
            break;
          }
        }
      }
    if (added == 0) break;
    if (round > 50) throw SolverError("solve_modulus: constraint generation did not terminate", res.gap);
  }

  sol.omega = -q.c.dot(res.x);
  sol.mu = res.lam0;
  sol.duality_gap = res.gap;
  sol.iterations = res.iters;
  sol.f_star.resize(static_cast<Eigen::Index>(n), 2);
  for (std::size_t i = 0; i < n; ++i)
    for (int d = 0; d < 2; ++d)
      sol.f_star(static_cast<Eigen::Index>(i), d) =
          res.x(static_cast<Eigen::Index>(detail::var_index(sol.site_of[i], d)));
  for (std::size_t e = 0; e < lip_count; ++e) {
    EdgeDual ed;
    ed.arm = static_cast<int>(q.lin[e].p % 2);
    ed.from = q.lin[e].p / 2;
    ed.to = q.lin[e].q / 2;
    ed.length = sd(static_cast<Eigen::Index>(ed.from), static_cast<Eigen::Index>(ed.to));
    ed.lambda = res.lam(static_cast<Eigen::Index>(e));
    ed.slack = res.slack(static_cast<Eigen::Index>(e));
    sol.duals.push_back(ed);
  }
  sol.omega_prime_dual = sol.mu * delta / 2.0;
  double treated_mass = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (pr.dataset.z[i] == 1) treated_mass += sol.f(i, 1) / (pr.dataset.sigma[i] * pr.dataset.sigma[i]);
  sol.omega_prime = treated_mass != 0.0 ? delta * pr.weight_sum() / (2.0 * treated_mass) : sol.omega_prime_dual;
  return sol;
}

inline ModulusSolution solve_modulus(const ModulusProblem& pr, double delta, const ModulusOptions& opt = {}) {
  if (!(delta > 0.0) || !std::isfinite(delta)) throw InputError("solve_modulus: delta must be positive");
  return solve_modulus(pr, make_modulus_plan(pr, opt.prune), delta, opt);
}

// omega'(delta) = delta * sum(w) / (2 * sum_{z_j = 1} f*(x_j, 1) / sigma_j^2). Stores it into `sol`.
inline double omega_derivative(ModulusSolution& sol, const ModulusProblem& pr) {
  double treated_mass = 0.0;
  for (std::size_t i = 0; i < pr.dataset.size(); ++i)
    if (pr.dataset.z[i] == 1) treated_mass += sol.f(i, 1) / (pr.dataset.sigma[i] * pr.dataset.sigma[i]);
  if (treated_mass == 0.0) throw DegenerateProblem("omega_derivative: solution carries no treated mass");
  sol.omega_prime = sol.delta * pr.weight_sum() / (2.0 * treated_mass);
  return sol.omega_prime;
}

inline bool is_binding(const EdgeDual& e, double dual_scale, double primal_scale) {
  return e.lambda * primal_scale >= e.slack * dual_scale;
}

// Lipschitz multipliers of binding constraints, reported on representative units.
inline std::vector<BindingDual> binding_duals(const ModulusSolution& sol, const ModulusProblem& pr) {
  const double ws = pr.weight_sum();
  const double fs = std::max(sol.f_star.cwiseAbs().maxCoeff(), 1e-300);
  std::vector<BindingDual> out;
  for (const auto& e : sol.duals)
    if (is_binding(e, ws, fs)) out.push_back({e.arm, sol.sites[e.from][0], sol.sites[e.to][0], e.lambda});
  return out;
}

// Counterfactual matching weights. Entry (k, j) is the weight unit j receives when the
// estimator imputes the unobserved arm of unit k; row k sums to w_k. Only pairs with opposite
// treatments connected through binding Lipschitz constraints are nonzero.
inline Eigen::MatrixXd matching_weights(const ModulusSolution& sol, const ModulusProblem& pr) {
  if (!(sol.mu > 0.0)) throw DegenerateProblem("matching_weights: ball constraint multiplier is zero");
  const std::size_t n = pr.dataset.size();
  const std::size_t m = sol.sites.size();
  const double ws = pr.weight_sum();
  const double fs = std::max(sol.f_star.cwiseAbs().maxCoeff(), 1e-300);
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));

  for (int d = 0; d < 2; ++d) {
    // arm 1 sends flow from imputed units toward observed ones; arm 0 runs the other way
    const double sgn = d == 1 ? 1.0 : -1.0;
    std::vector<std::vector<std::pair<std::size_t, double>>> outs(m), ins(m);
    for (std::size_t s = 0; s < m; ++s) {
      for (std::size_t i : sol.sites[s]) {
        double a;
        if (pr.dataset.z[i] != d) {
          a = 2.0 * pr.w[i];
        } else {
          const double s2 = pr.dataset.sigma[i] * pr.dataset.sigma[i];
          a = 2.0 * pr.w[i] - 2.0 * sgn * sol.mu * sol.f(i, d) / s2;
        }
        if (a > 0.0) outs[s].push_back({i, a});
        else if (a < 0.0) ins[s].push_back({i, -a});
      }
      // zero-distance matches inside a site
      std::size_t r = 0;
      for (auto& [k, amt] : outs[s]) {
        while (amt > 0.0 && r < ins[s].size()) {
          auto& [j, cap] = ins[s][r];
          const double moved = std::min(amt, cap);
          if (pr.dataset.z[k] != pr.dataset.z[j])
            W(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) += moved / 2.0;
          amt -= moved;
          cap -= moved;
          if (cap <= 0.0) ++r;
        }
      }
    }
    std::vector<std::size_t> src, snk;
    std::vector<double> p, qv;
    for (std::size_t s = 0; s < m; ++s) {
      double o = 0.0, in = 0.0;
      for (const auto& pr2 : outs[s]) o += pr2.second;
      for (const auto& pr2 : ins[s]) in += pr2.second;
      if (o > 0.0) {
        src.push_back(s);
        p.push_back(o);
      }
      if (in > 0.0) {
        snk.push_back(s);
        qv.push_back(in);
      }
    }
    if (src.empty()) continue;
    const double sp = std::accumulate(p.begin(), p.end(), 0.0);
    const double sq = std::accumulate(qv.begin(), qv.end(), 0.0);
    if (!(sq > 0.0) || std::abs(sp - sq) > 1e-5 * std::max(sp, sq))
      throw SolverError("matching_weights: flow balance violated (" + std::to_string(sp) + " vs " +
                            std::to_string(sq) + ")",
                        sol.duality_gap);
    for (double& v : qv) v *= sp / sq;

    // reachability through binding constraints in flow direction
    std::vector<std::vector<std::size_t>> adj(m);
    for (const auto& e : sol.duals) {
      if (e.arm != d || !is_binding(e, ws, fs)) continue;
      if (d == 1) adj[e.from].push_back(e.to);
      else adj[e.to].push_back(e.from);
    }
    std::vector<std::size_t> sink_pos(m, std::numeric_limits<std::size_t>::max());
    for (std::size_t r = 0; r < snk.size(); ++r) sink_pos[snk[r]] = r;
    std::vector<std::pair<std::size_t, std::size_t>> allowed;
    for (std::size_t r = 0; r < src.size(); ++r) {
      std::vector<bool> seen(m, false);
      std::vector<std::size_t> stack{src[r]};
      seen[src[r]] = true;
      while (!stack.empty()) {
        const std::size_t u = stack.back();
        stack.pop_back();
        if (sink_pos[u] != std::numeric_limits<std::size_t>::max() && u != src[r])
          allowed.emplace_back(r, sink_pos[u]);
        for (std::size_t v : adj[u])
          if (!seen[v]) {
            seen[v] = true;
            stack.push_back(v);
          }
      }
    }
    const Eigen::MatrixXd T = max_flow_matrix(p, qv, allowed);

    // split site-level transport across the units of each site
    for (std::size_t r = 0; r < src.size(); ++r) {
      const auto& o = outs[src[r]];
      double ototal = 0.0;
      for (const auto& pr2 : o) ototal += pr2.second;
      for (std::size_t c = 0; c < snk.size(); ++c) {
        const double t = T(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        if (t <= 0.0) continue;
        const auto& in = ins[snk[c]];
        double itotal = 0.0;
        for (const auto& pr2 : in) itotal += pr2.second;
        for (const auto& [k, ak] : o)
          for (const auto& [j, aj] : in) {
            if (pr.dataset.z[k] == pr.dataset.z[j]) continue;
            W(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) +=
                t * (ak / ototal) * (aj / itotal) / 2.0;
          }
      }
    }
  }
  // rows only for units whose counterfactual is imputed
  for (std::size_t k = 0; k < n; ++k)
    if (!(pr.w[k] > 0.0)) W.row(static_cast<Eigen::Index>(k)).setZero();
  return W;
}

// Re-solve with f(., 1) forced to decrease with distance from the positive-weight cluster
// over the zero-weight units; true when the optimal value is unchanged.
inline bool monotone_extrapolation_check(const ModulusProblem& pr, double delta, double tol = 1e-6,
                                         const ModulusSolution* base = nullptr) {
  pr.validate();
  if (pr.dataset.dim() != 1) throw InputError("monotone_extrapolation_check: unsupported for non-1-D covariates");
  const std::size_t n = pr.dataset.size();
  std::vector<std::size_t> zero, pos;
  for (std::size_t i = 0; i < n; ++i) (pr.w[i] > 0.0 ? pos : zero).push_back(i);
  auto xs = [&](std::size_t i) { return pr.dataset.x(static_cast<Eigen::Index>(i), 0); };
  double zmax = -std::numeric_limits<double>::infinity(), pmin = std::numeric_limits<double>::infinity();
  for (std::size_t i : zero) zmax = std::max(zmax, xs(i));
  for (std::size_t i : pos) pmin = std::min(pmin, xs(i));
  if (!zero.empty() && !(zmax < pmin))
    throw InputError("monotone_extrapolation_check: weights are not a two-cluster split (w = 0 iff x <= t)");

  const ModulusSolution full = base ? *base : solve_modulus(pr, delta);
  // distinct zero-weight sites ordered by x (= by decreasing distance to the weighted cluster)
  std::sort(zero.begin(), zero.end(), [&](std::size_t a, std::size_t b) { return xs(a) < xs(b); });
  std::vector<std::size_t> reps;
  for (std::size_t i : zero)
    if (reps.empty() || xs(i) != xs(reps.back())) reps.push_back(i);
  if (reps.size() < 2 || pr.lip.L == 0.0) return true;

  ModulusOptions opt;
  for (std::size_t r = 1; r < reps.size(); ++r) opt.extra.push_back({reps[r - 1], reps[r], 1, 0.0});
  // strictly feasible start: small increasing slope in arm 1
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  std::sort(all.begin(), all.end(), [&](std::size_t a, std::size_t b) { return xs(a) < xs(b); });
  double slope = std::numeric_limits<double>::infinity();
  for (std::size_t r = 1; r < n; ++r) {
    const double dx = xs(all[r]) - xs(all[r - 1]);
    if (dx > 0.0)
      slope = std::min(slope, pr.lip.L * pr.lip.dist(static_cast<Eigen::Index>(all[r]), static_cast<Eigen::Index>(all[r - 1])) / dx);
  }
  const double range = xs(all.back()) - xs(all.front());
  double ptot = 0.0;
  for (double s : pr.dataset.sigma) ptot += 1.0 / (s * s);
  slope = std::min(slope / 2.0, delta / (4.0 * range * std::sqrt(ptot)));
  Eigen::MatrixXd start = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), 2);
  for (std::size_t i = 0; i < n; ++i) start(static_cast<Eigen::Index>(i), 1) = slope * (xs(i) - xs(all.front()));
  opt.start = start;
  const ModulusSolution con = solve_modulus(pr, delta, opt);
  return std::abs(full.omega - con.omega) <= tol * std::max(std::abs(full.omega), 1e-300);
}

// Two-cluster geometry with k-fold heavier outer clusters:
// n controls at -xi, n treated at +xi, kn controls at -xi-eta, kn treated at xi+eta, sigma = 1.
struct ToyConfig {
  int n = 25;
  double k = 10.0;
  double xi = 0.01;
  double eta = 0.1;
  double L = 1.0;

  std::size_t outer_count() const {
    const double kn = k * n;
    const auto r = static_cast<std::size_t>(std::llround(kn));
    if (std::abs(kn - static_cast<double>(r)) > 1e-9) throw InputError("ToyConfig: k*n must be an integer");
    return r;
  }

  void validate() const {
    if (n < 1) throw InputError("ToyConfig: n must be positive");
    if (!(k > 1.0)) throw InputError("ToyConfig: k <= 1 is unsupported");
    if (!(xi > 0.0) || !(eta > 0.0) || !(L > 0.0)) throw InputError("ToyConfig: xi, eta, L must be positive");
    outer_count();
  }
};

// Units in order: outer controls, inner controls, inner treated, outer treated. y = 0, pi = 1/2
// on the inner sites and 0/1 on the outer ones.
inline Dataset toy_layout(const ToyConfig& cfg) {
  cfg.validate();
  const std::size_t kn = cfg.outer_count();
  const auto nn = static_cast<std::size_t>(cfg.n);
  const std::size_t N = 2 * (kn + nn);
  Dataset d;
  d.x.resize(static_cast<Eigen::Index>(N), 1);
  std::size_t r = 0;
  auto put = [&](std::size_t count, double x, int z, double pi) {
    for (std::size_t c = 0; c < count; ++c, ++r) {
      d.x(static_cast<Eigen::Index>(r), 0) = x;
      d.z.push_back(z);
      d.pi.push_back(pi);
      d.y.push_back(0.0);
      d.sigma.push_back(1.0);
    }
  };
  put(kn, -cfg.xi - cfg.eta, 0, 0.0);
  put(nn, -cfg.xi, 0, 0.5);
  put(nn, cfg.xi, 1, 0.5);
  put(kn, cfg.xi + cfg.eta, 1, 1.0);
  return d;
}

// Weights 1/((k+1)n) on the outer units: the normalization of the closed-form toy modulus.
inline std::vector<double> toy_weights(const ToyConfig& cfg) {
  const Dataset d = toy_layout(cfg);
  std::vector<double> w(d.size(), 0.0);
  const double v = 1.0 / ((cfg.k + 1.0) * cfg.n);
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d.pi[i] == 0.0 || d.pi[i] == 1.0) w[i] = v;
  return w;
}

inline ModulusProblem toy_problem(const ToyConfig& cfg) {
  return ModulusProblem::make(toy_layout(cfg), toy_weights(cfg), cfg.L);
}

struct ToyOracle {
  double omega = 0.0;
  double omega_prime = 0.0;
  double maxbias = 0.0;
  double sd = 0.0;
  int regime = 1;  // 1: Lipschitz constraints slack, 2: binding
};

inline double toy_delta_c(const ToyConfig& c) {
  c.validate();
  const double n = c.n, k = c.k;
  return 2.0 * std::sqrt(2.0 * n * k * (k + 1.0)) / (k - 1.0) * c.L * c.eta;
}

inline ToyOracle analytic_modulus_oracle(const ToyConfig& c, double delta) {
  c.validate();
  if (!(delta > 0.0)) throw InputError("analytic_modulus_oracle: delta must be positive");
  const double n = c.n, k = c.k, L = c.L, eta = c.eta, xi = c.xi;
  const double pre = 2.0 * k / (k + 1.0);
  const double base = 2.0 * L * (2.0 * xi + eta);
  ToyOracle o;
  if (delta <= toy_delta_c(c)) {
    const double gamma = (2.0 / n) * (1.0 + 1.0 / k);
    o.regime = 1;
    o.omega = pre * (delta * std::sqrt(gamma) / 2.0 + base);
    o.omega_prime = pre * std::sqrt(gamma) / 2.0;
    o.maxbias = base * k / (k + 1.0);
    o.sd = (k / (k + 1.0)) * std::sqrt(gamma);
  } else {
    const double C = 2.0 * k * n * L * L * eta * eta / (k + 1.0);
    const double s = std::sqrt(delta * delta / 4.0 - C);
    const double r = std::sqrt(8.0 / (n * (k + 1.0)));
    o.regime = 2;
    o.omega = pre * (base + 2.0 * (k - 1.0) * L * eta / (k + 1.0) + r * s);
    o.omega_prime = pre * r * (delta / 4.0) / s;
    o.maxbias = k * (base / (k + 1.0) + 2.0 * (k - 1.0) * L * eta / ((k + 1.0) * (k + 1.0)) -
                     (C / (k + 1.0)) * r / s);
    o.sd = std::sqrt(2.0) * k / ((k + 1.0) * std::sqrt(n * (k + 1.0))) * delta / s;
  }
  return o;
}

// Debug trace: one CSV row per solution.
inline void write_modulus_trace(std::ostream& out, const std::vector<ModulusSolution>& sols) {
  out.precision(17);
  out << "delta,omega,omega_prime,mu\n";
  for (const auto& s : sols) out << s.delta << ',' << s.omega << ',' << s.omega_prime << ',' << s.mu << '\n';
}

}  // namespace overlap
