#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "overlap/errors.hpp"

namespace overlap {

// Observed units: covariates (n x d), outcome, binary treatment, known propensity and
// per-unit noise standard deviation.
struct Dataset {
  Eigen::MatrixXd x;
  std::vector<double> y;
  std::vector<int> z;
  std::vector<double> pi;
  std::vector<double> sigma;

  std::size_t size() const noexcept { return y.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(x.cols()); }

  void validate() const {
    const std::size_t n = y.size();
    if (n == 0) throw InputError("dataset: need at least one unit");
    if (x.cols() < 1) throw InputError("dataset: need at least one covariate column");
    if (static_cast<std::size_t>(x.rows()) != n || z.size() != n || pi.size() != n ||
        sigma.size() != n)
      throw InputError("dataset: column lengths disagree");
    for (std::size_t i = 0; i < n; ++i) {
      if (z[i] != 0 && z[i] != 1) throw InputError("dataset: z must be 0 or 1 (unit " + std::to_string(i) + ")");
      if (!(pi[i] >= 0.0 && pi[i] <= 1.0))
        throw InputError("dataset: propensity outside [0,1] (unit " + std::to_string(i) + ")");
      if (!(sigma[i] > 0.0) || !std::isfinite(sigma[i]))
        throw InputError("dataset: sigma must be positive (unit " + std::to_string(i) + ")");
      if (!std::isfinite(y[i])) throw InputError("dataset: non-finite outcome (unit " + std::to_string(i) + ")");
    }
    if (!x.allFinite()) throw InputError("dataset: non-finite covariate");
  }

  std::size_t treated_count() const {
    return static_cast<std::size_t>(std::count(z.begin(), z.end(), 1));
  }
};

inline std::vector<double> broadcast_sigma(std::size_t n, double sigma) {
  return std::vector<double>(n, sigma);
}

// Rows of `data` listed in `idx`, in that order.
inline Dataset subset(const Dataset& data, std::span<const std::size_t> idx) {
  Dataset out;
  out.x.resize(static_cast<Eigen::Index>(idx.size()), data.x.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    out.x.row(static_cast<Eigen::Index>(r)) = data.x.row(static_cast<Eigen::Index>(idx[r]));
    out.y.push_back(data.y[idx[r]]);
    out.z.push_back(data.z[idx[r]]);
    out.pi.push_back(data.pi[idx[r]]);
    out.sigma.push_back(data.sigma[idx[r]]);
  }
  return out;
}

struct OverlapPartition {
  double epsilon = 0.0;
  std::vector<bool> s;     // true = overlap
  std::vector<double> w;   // estimand weights on the non-overlap region

  std::size_t overlap_count() const {
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), true));
  }
  std::size_t non_overlap_count() const { return s.size() - overlap_count(); }
  bool all_overlap() const { return non_overlap_count() == 0; }

  std::vector<std::size_t> overlap_indices() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i]) idx.push_back(i);
    return idx;
  }
};

struct EstimandDecomposition {
  double tau = 0.0;
  double tau_plus = 0.0;
  double tau_minus = 0.0;
};

inline double overlap_measure(double pi) {
  if (!(pi >= 0.0 && pi <= 1.0)) throw InputError("overlap_measure: propensity outside [0,1]");
  return std::min(pi, 1.0 - pi);
}

// q(x_i) == epsilon counts as overlap.
inline OverlapPartition partition(const Dataset& data, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 0.5)) throw InputError("partition: epsilon must lie in (0, 1/2)");
  const std::size_t n = data.size();
  OverlapPartition part;
  part.epsilon = epsilon;
  part.s.resize(n);
  part.w.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    part.s[i] = overlap_measure(data.pi[i]) >= epsilon;
    if (!part.s[i]) part.w[i] = 1.0 / static_cast<double>(n);
  }
  return part;
}

inline EstimandDecomposition decompose_estimand(std::span<const double> tau_per_unit,
                                                const OverlapPartition& part) {
  if (tau_per_unit.size() != part.s.size())
    throw InputError("decompose_estimand: length mismatch");
  const double n = static_cast<double>(tau_per_unit.size());
  EstimandDecomposition out;
  for (std::size_t i = 0; i < tau_per_unit.size(); ++i) {
    if (part.s[i]) out.tau_plus += tau_per_unit[i] / n;
    else out.tau_minus += tau_per_unit[i] / n;
  }
  out.tau = out.tau_plus + out.tau_minus;
  return out;
}

namespace detail {

inline double sq_dist(const Eigen::MatrixXd& x, Eigen::Index i, Eigen::Index j) {
  return (x.row(i) - x.row(j)).squaredNorm();
}

}  // namespace detail

// Nearest-neighbour noise estimator: each unit is compared with the mean of its J closest
// units in the same arm (ties -> lower index). Returns sigma-hat, not its square.
inline double estimate_noise_sd(const Dataset& data, int J = 2) {
  if (J < 1) throw InputError("estimate_noise_sd: J must be positive");
  const std::size_t n = data.size();
  std::vector<std::size_t> arm[2];
  for (std::size_t i = 0; i < n; ++i) arm[data.z[i]].push_back(i);
  for (int d = 0; d < 2; ++d) {
    if (arm[d].size() <= static_cast<std::size_t>(J))
      throw InputError("estimate_noise_sd: arm z=" + std::to_string(d) + " has " +
                       std::to_string(arm[d].size()) + " units, need at least J+1=" +
                       std::to_string(J + 1));
  }
  const double shrink = static_cast<double>(J) / (J + 1.0);
  double total = 0.0;
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& same = arm[data.z[i]];
    cand.clear();
    for (std::size_t j : same) {
      if (j == i) continue;
      cand.emplace_back(detail::sq_dist(data.x, static_cast<Eigen::Index>(i),
                                        static_cast<Eigen::Index>(j)), j);
    }
    std::partial_sort(cand.begin(), cand.begin() + J, cand.end());
    double mean = 0.0;
    for (int m = 0; m < J; ++m) mean += data.y[cand[static_cast<std::size_t>(m)].second];
    mean /= J;
    const double r = data.y[i] - mean;
    total += shrink * r * r;
  }
  return std::sqrt(total / static_cast<double>(n));
}

// ---------------------------------------------------------------------------------------
// CSV ingestion. Header: x1..xd, y, z, pi and an optional sigma column (any order).
// A missing sigma column is filled with estimate_noise_sd(J) broadcast to every unit.

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, std::size_t row, const std::string& col) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InputError("schema: row " + std::to_string(row) + " column '" + col +
                     "' is not a number: '" + s + "'");
  }
}

}  // namespace detail

inline Dataset read_dataset_csv(std::istream& in, int J = 2) {
  std::string line;
  if (!std::getline(in, line)) throw InputError("schema: empty input");
  const auto header = detail::split_csv_line(line);
  int col_y = -1, col_z = -1, col_pi = -1, col_sigma = -1;
  std::vector<int> col_x;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& h = header[c];
    const int ci = static_cast<int>(c);
    if (h == "y") col_y = ci;
    else if (h == "z") col_z = ci;
    else if (h == "pi") col_pi = ci;
    else if (h == "sigma") col_sigma = ci;
    else if (h.size() > 1 && h[0] == 'x' &&
             std::all_of(h.begin() + 1, h.end(), [](char ch) { return ch >= '0' && ch <= '9'; })) {
      const std::size_t k = std::stoul(h.substr(1));
      if (k == 0) throw InputError("schema: covariate columns are numbered from x1");
      if (col_x.size() < k) col_x.resize(k, -1);
      col_x[k - 1] = ci;
    } else {
      throw InputError("schema: unexpected column '" + h + "'");
    }
  }
  if (col_y < 0 || col_z < 0 || col_pi < 0) throw InputError("schema: need columns y, z, pi");
  if (col_x.empty()) throw InputError("schema: need at least one covariate column x1");
  for (std::size_t k = 0; k < col_x.size(); ++k)
    if (col_x[k] < 0) throw InputError("schema: missing covariate column x" + std::to_string(k + 1));

  std::vector<std::vector<double>> xs;
  Dataset data;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw InputError("schema: row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                       " cells, header has " + std::to_string(header.size()));
    std::vector<double> xr;
    for (std::size_t k = 0; k < col_x.size(); ++k)
      xr.push_back(detail::parse_double(cells[static_cast<std::size_t>(col_x[k])], row, header[static_cast<std::size_t>(col_x[k])]));
    xs.push_back(std::move(xr));
    data.y.push_back(detail::parse_double(cells[static_cast<std::size_t>(col_y)], row, "y"));
    const std::string& zs = cells[static_cast<std::size_t>(col_z)];
    if (zs != "0" && zs != "1")
      throw InputError("schema: row " + std::to_string(row) + " column 'z' must be 0 or 1, got '" + zs + "'");
    data.z.push_back(zs == "1" ? 1 : 0);
    data.pi.push_back(detail::parse_double(cells[static_cast<std::size_t>(col_pi)], row, "pi"));
    if (col_sigma >= 0)
      data.sigma.push_back(detail::parse_double(cells[static_cast<std::size_t>(col_sigma)], row, "sigma"));
  }
  if (xs.empty()) throw InputError("schema: no data rows");
  data.x.resize(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(col_x.size()));
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t k = 0; k < col_x.size(); ++k)
      data.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = xs[i][k];
  if (col_sigma < 0) {
    data.sigma.assign(data.y.size(), 1.0);  // placeholder so validate() can check the rest
    data.validate();
    const double s = estimate_noise_sd(data, J);
    if (!(s > 0.0)) throw InputError("schema: estimated noise sd is zero; supply a sigma column");
    data.sigma = broadcast_sigma(data.size(), s);
  }
  data.validate();
  return data;
}

inline Dataset read_dataset_csv(const std::string& path, int J = 2) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  return read_dataset_csv(in, J);
}

inline void write_dataset_csv(std::ostream& out, const Dataset& data) {
  out.precision(17);
  for (Eigen::Index k = 0; k < data.x.cols(); ++k) out << 'x' << (k + 1) << ',';
  out << "y,z,pi,sigma\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (Eigen::Index k = 0; k < data.x.cols(); ++k) out << data.x(static_cast<Eigen::Index>(i), k) << ',';
    out << data.y[i] << ',' << data.z[i] << ',' << data.pi[i] << ',' << data.sigma[i] << '\n';
  }
}

}  // namespace overlap
