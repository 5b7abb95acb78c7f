#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <queue>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "overlap/errors.hpp"

namespace overlap {

// Dinic's algorithm on real capacities. Residual capacities below `eps` count as zero.
class FlowNetwork {
 public:
  explicit FlowNetwork(std::size_t nodes, double eps = 0.0) : adj_(nodes), eps_(eps) {}

  // Returns the edge id used by flow_on().
  std::size_t add_edge(std::size_t from, std::size_t to, double cap) {
    adj_[from].push_back(edges_.size());
    edges_.push_back({to, cap, cap});
    adj_[to].push_back(edges_.size());
    edges_.push_back({from, 0.0, 0.0});
    return edges_.size() - 2;
  }

  double max_flow(std::size_t s, std::size_t t) {
    double total = 0.0;
    while (bfs(s, t)) {
      it_.assign(adj_.size(), 0);
      while (true) {
        const double pushed = dfs(s, t, std::numeric_limits<double>::infinity());
        if (pushed <= eps_) break;
        total += pushed;
      }
    }
    return total;
  }

  // read from the reverse residual so infinite capacities stay exact
  double flow_on(std::size_t edge) const { return edges_[edge ^ 1U].cap - edges_[edge ^ 1U].orig; }

  // Nodes reachable from s through residual edges (valid after max_flow).
  std::vector<bool> reachable_from(std::size_t s) const {
    std::vector<bool> seen(adj_.size(), false);
    std::vector<std::size_t> stack{s};
    seen[s] = true;
    while (!stack.empty()) {
      const std::size_t u = stack.back();
      stack.pop_back();
      for (std::size_t e : adj_[u]) {
        const auto& ed = edges_[e];
        if (ed.cap > eps_ && !seen[ed.to]) {
          seen[ed.to] = true;
          stack.push_back(ed.to);
        }
      }
    }
    return seen;
  }

 private:
  struct Edge {
    std::size_t to;
    double cap;
    double orig;
  };

  bool bfs(std::size_t s, std::size_t t) {
    level_.assign(adj_.size(), -1);
    std::queue<std::size_t> q;
    level_[s] = 0;
    q.push(s);
    while (!q.empty()) {
      const std::size_t u = q.front();
      q.pop();
      for (std::size_t e : adj_[u]) {
        const auto& ed = edges_[e];
        if (ed.cap > eps_ && level_[ed.to] < 0) {
          level_[ed.to] = level_[u] + 1;
          q.push(ed.to);
        }
      }
    }
    return level_[t] >= 0;
  }

  double dfs(std::size_t u, std::size_t t, double limit) {
    if (u == t) return limit;
    for (std::size_t& i = it_[u]; i < adj_[u].size(); ++i) {
      const std::size_t e = adj_[u][i];
      Edge& ed = edges_[e];
      if (ed.cap <= eps_ || level_[ed.to] != level_[u] + 1) continue;
      const double got = dfs(ed.to, t, std::min(limit, ed.cap));
      if (got > eps_) {
        ed.cap -= got;
        edges_[e ^ 1U].cap += got;
        return got;
      }
    }
    return 0.0;
  }

  std::vector<std::vector<std::size_t>> adj_;
  std::vector<Edge> edges_;
  std::vector<int> level_;
  std::vector<std::size_t> it_;
  double eps_;
};

// Nonnegative matrix A with A_ij = 0 off `allowed`, row sums p and column sums q, built from a
// maximum flow on source -> rows (cap p_i) -> columns (cap inf) -> sink (cap q_j).
// Throws InfeasibleTransport (with the rows of a violated Hall cut) when no such matrix exists.
inline Eigen::MatrixXd max_flow_matrix(const std::vector<double>& p, const std::vector<double>& q,
                                       const std::vector<std::pair<std::size_t, std::size_t>>& allowed) {
  const std::size_t m = p.size();
  const std::size_t n = q.size();
  for (double v : p)
    if (!(v >= 0.0) || !std::isfinite(v)) throw InputError("max_flow_matrix: row sums must be finite and >= 0");
  for (double v : q)
    if (!(v >= 0.0) || !std::isfinite(v)) throw InputError("max_flow_matrix: column sums must be finite and >= 0");
  const double sp = std::accumulate(p.begin(), p.end(), 0.0);
  const double sq = std::accumulate(q.begin(), q.end(), 0.0);
  const double scale = std::max({sp, sq, 1e-300});
  if (std::abs(sp - sq) > 1e-12 * scale)
    throw InputError("max_flow_matrix: row and column totals differ");

  const double eps = 1e-15 * scale;
  const std::size_t s = m + n, t = m + n + 1;
  FlowNetwork net(m + n + 2, eps);
  std::vector<std::size_t> src_edge(m);
  for (std::size_t i = 0; i < m; ++i) src_edge[i] = net.add_edge(s, i, p[i]);
  for (std::size_t j = 0; j < n; ++j) net.add_edge(m + j, t, q[j]);
  std::vector<std::size_t> mid_edge;
  mid_edge.reserve(allowed.size());
  for (const auto& [i, j] : allowed) {
    if (i >= m || j >= n) throw InputError("max_flow_matrix: allowed index out of range");
    mid_edge.push_back(net.add_edge(i, m + j, std::numeric_limits<double>::infinity()));
  }
  const double flow = net.max_flow(s, t);
  if (flow < sp - 1e-9 * scale) {
    const auto seen = net.reachable_from(s);
    std::vector<std::size_t> cut;
    for (std::size_t i = 0; i < m; ++i)
      if (seen[i]) cut.push_back(i);
    throw InfeasibleTransport("max_flow_matrix: no feasible matrix, routed " + std::to_string(flow) +
                                  " of " + std::to_string(sp),
                              std::move(cut), flow, sp);
  }
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < allowed.size(); ++k) {
    const double f = net.flow_on(mid_edge[k]);
    if (f > 0.0)
      a(static_cast<Eigen::Index>(allowed[k].first), static_cast<Eigen::Index>(allowed[k].second)) += f;
  }
  return a;
}

}  // namespace overlap
