#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "overlap/core_data.hpp"
#include "overlap/errors.hpp"

namespace overlap {

inline Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& x) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = (x.row(i) - x.row(j)).norm();
      d(i, j) = v;
      d(j, i) = v;
    }
  return d;
}

// Finite-sample Lipschitz class: |f(x_i,d) - f(x_j,d)| <= L * dist(i,j) for every pair and arm.
struct LipschitzClass {
  double L = 0.0;
  Eigen::MatrixXd dist;

  LipschitzClass() = default;
  LipschitzClass(double lip, Eigen::MatrixXd distances) : L(lip), dist(std::move(distances)) {
    if (!(L >= 0.0) || !std::isfinite(L)) throw InputError("LipschitzClass: L must be finite and >= 0");
    if (dist.rows() != dist.cols()) throw InputError("LipschitzClass: distance matrix must be square");
  }

  static LipschitzClass from_covariates(double lip, const Eigen::MatrixXd& x) {
    return LipschitzClass(lip, pairwise_distances(x));
  }
};

// Outcome regression mu_d(x). Implementations must be deterministic given their training data.
class Regressor {
 public:
  virtual ~Regressor() = default;
  virtual double predict(const Eigen::RowVectorXd& x, int arm) const = 0;
};

using RegressorFactory = std::function<std::unique_ptr<Regressor>(const Dataset&)>;

// Per-arm k-nearest-neighbour mean; ties in distance go to the lower training index.
class KnnRegressor final : public Regressor {
 public:
  KnnRegressor(const Dataset& train, int k) : k_(k) {
    if (k < 1) throw InputError("KnnRegressor: k must be positive");
    for (int d = 0; d < 2; ++d) {
      std::vector<Eigen::Index> rows;
      for (std::size_t i = 0; i < train.size(); ++i)
        if (train.z[i] == d) rows.push_back(static_cast<Eigen::Index>(i));
      if (rows.empty())
        throw InputError("fit_default_regressor: arm z=" + std::to_string(d) + " has no training units");
      auto& a = arms_[static_cast<std::size_t>(d)];
      a.x.resize(static_cast<Eigen::Index>(rows.size()), train.x.cols());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        a.x.row(static_cast<Eigen::Index>(r)) = train.x.row(rows[r]);
        a.y.push_back(train.y[static_cast<std::size_t>(rows[r])]);
      }
    }
  }

  double predict(const Eigen::RowVectorXd& x, int arm) const override {
    const auto& a = arms_.at(static_cast<std::size_t>(arm));
    const std::size_t m = a.y.size();
    // Arms smaller than k average over every unit they have.
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(k_), m);
    std::vector<std::pair<double, std::size_t>> cand(m);
    for (std::size_t j = 0; j < m; ++j)
      cand[j] = {(a.x.row(static_cast<Eigen::Index>(j)) - x).squaredNorm(), j};
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += a.y[cand[j].second];
    return s / static_cast<double>(k);
  }

  int k() const noexcept { return k_; }

 private:
  struct Arm {
    Eigen::MatrixXd x;
    std::vector<double> y;
  };
  int k_;
  std::array<Arm, 2> arms_;
};

inline std::unique_ptr<Regressor> fit_default_regressor(const Dataset& train, int k = 5) {
  return std::make_unique<KnnRegressor>(train, k);
}

inline RegressorFactory default_regressor_factory(int k = 5) {
  return [k](const Dataset& d) { return fit_default_regressor(d, k); };
}

struct ContextualizedL {
  double L0 = 0.0;  // arm z=0
  double L1 = 0.0;  // arm z=1
  double L = 0.0;   // max of the two
};

// Lower empirical p-quantile: order statistic ceil(p*m) (1-based) of the sorted values.
inline double lower_quantile(std::vector<double> v, double p) {
  if (v.empty()) throw InputError("lower_quantile: empty sample");
  const std::size_t m = v.size();
  std::size_t rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(m) - 1e-12));
  rank = std::clamp<std::size_t>(rank, 1, m);
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(rank - 1), v.end());
  return v[rank - 1];
}

// For every overlap unit i: p-quantile over j != i of |mu(x_i) - mu(x_j)| / |x_i - x_j|;
// maximum over i, then over arms.
inline ContextualizedL contextualize_L(const Dataset& overlap_data, const Regressor& reg, double p) {
  if (!(p > 0.0 && p < 1.0)) throw InputError("contextualize_L: p must lie in (0,1)");
  const std::size_t n = overlap_data.size();
  if (n < 2) throw InputError("contextualize_L: need at least two overlap units");
  const Eigen::MatrixXd dist = pairwise_distances(overlap_data.x);
  ContextualizedL out;
  std::vector<double> slopes;
  slopes.reserve(n - 1);
  for (int arm = 0; arm < 2; ++arm) {
    std::vector<double> mu(n);
    for (std::size_t i = 0; i < n; ++i)
      mu[i] = reg.predict(overlap_data.x.row(static_cast<Eigen::Index>(i)), arm);
    double best = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      slopes.clear();
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double d = dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        const double diff = std::abs(mu[i] - mu[j]);
        if (d == 0.0) {
          if (diff != 0.0)
            throw InputError("contextualize_L: units " + std::to_string(i) + " and " +
                             std::to_string(j) + " share covariates but differ in predicted outcome");
          slopes.push_back(0.0);
        } else {
          slopes.push_back(diff / d);
        }
      }
      best = std::max(best, lower_quantile(slopes, p));
    }
    (arm == 0 ? out.L0 : out.L1) = best;
  }
  out.L = std::max(out.L0, out.L1);
  return out;
}

}  // namespace overlap
