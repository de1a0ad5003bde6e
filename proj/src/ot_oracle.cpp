#include "wdis/ot_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "wdis/dataset.hpp"
#include "wdis/error.hpp"

namespace wdis {

DiscreteDistribution DiscreteDistribution::uniform(NumArray points) {
  const std::size_t n = points.rows();
  return {std::move(points), std::vector<double>(n, 1.0 / static_cast<double>(n))};
}

void DiscreteDistribution::validate() const {
  if (points.rank() != 2 || points.rows() != weights.size() || weights.empty()) {
    fail(ErrorCode::kContractViolation, "distribution: " + std::to_string(weights.size()) +
                                            " weights for points " + shape_string(points.shape()));
  }
  if (!points.all_finite()) fail(ErrorCode::kContractViolation, "distribution: non-finite point");
  double s = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) fail(ErrorCode::kContractViolation, "distribution: negative weight");
    s += w;
  }
  if (std::abs(s - 1.0) > 1e-12) {
    fail(ErrorCode::kContractViolation, "distribution: weights sum to " + std::to_string(s));
  }
}

double euclidean(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

namespace {

struct Edge {
  std::size_t to;
  std::size_t rev;
  double cap;
  double cost;
};

class FlowNetwork {
 public:
  explicit FlowNetwork(std::size_t n) : adj_(n) {}

  std::size_t add(std::size_t from, std::size_t to, double cap, double cost) {
    adj_[from].push_back({to, adj_[to].size(), cap, cost});
    adj_[to].push_back({from, adj_[from].size() - 1, 0.0, -cost});
    return adj_[from].size() - 1;
  }

  // Sends flow from s to t along cheapest residual paths until no augmenting
  // path remains.
  void min_cost_flow(std::size_t s, std::size_t t) {
    const std::size_t n = adj_.size();
    const double inf = std::numeric_limits<double>::infinity();
    for (;;) {
      std::vector<double> dist(n, inf);
      std::vector<std::size_t> prev_node(n), prev_edge(n);
      std::vector<char> queued(n, 0);
      std::vector<std::size_t> queue = {s};
      dist[s] = 0.0;
      queued[s] = 1;
      // Bellman-Ford with a FIFO work list; reverse arcs carry negative cost.
      for (std::size_t head = 0; head < queue.size(); ++head) {
        const std::size_t u = queue[head];
        queued[u] = 0;
        for (std::size_t k = 0; k < adj_[u].size(); ++k) {
          const Edge& e = adj_[u][k];
          if (e.cap <= 0.0) continue;
          const double nd = dist[u] + e.cost;
          if (nd < dist[e.to] - 1e-15) {
            dist[e.to] = nd;
            prev_node[e.to] = u;
            prev_edge[e.to] = k;
            if (!queued[e.to]) {
              queued[e.to] = 1;
              queue.push_back(e.to);
            }
          }
        }
      }
      if (dist[t] == inf) return;
      double push = inf;
      for (std::size_t v = t; v != s; v = prev_node[v]) {
        push = std::min(push, adj_[prev_node[v]][prev_edge[v]].cap);
      }
      for (std::size_t v = t; v != s; v = prev_node[v]) {
        Edge& e = adj_[prev_node[v]][prev_edge[v]];
        e.cap -= push;
        adj_[v][e.rev].cap += push;
      }
    }
  }

  const Edge& edge(std::size_t from, std::size_t k) const { return adj_[from][k]; }

 private:
  std::vector<std::vector<Edge>> adj_;
};

}  // namespace

TransportPlan solve_transport(const DiscreteDistribution& p, const DiscreteDistribution& q) {
  p.validate();
  q.validate();
  const std::size_t n = p.size(), m = q.size();
  if (n > kMaxSupport || m > kMaxSupport) {
    fail(ErrorCode::kContractViolation, "exact_w1: supports are limited to " +
                                            std::to_string(kMaxSupport) + " points");
  }
  if (p.points.cols() != q.points.cols()) {
    fail(ErrorCode::kContractViolation, "exact_w1: points " + shape_string(p.points.shape()) +
                                            " vs " + shape_string(q.points.shape()));
  }
  double sp = 0.0, sq = 0.0;
  for (double w : p.weights) sp += w;
  for (double w : q.weights) sq += w;
  if (std::abs(sp - sq) > 1e-12) {
    fail(ErrorCode::kContractViolation, "exact_w1: total weights differ");
  }

  // Nodes: source, p_0..p_{n-1}, q_0..q_{m-1}, sink.
  const std::size_t source = 0, sink = n + m + 1;
  FlowNetwork net(n + m + 2);
  std::vector<std::vector<double>> cost(n, std::vector<double>(m));
  std::vector<std::vector<std::size_t>> arc(n, std::vector<std::size_t>(m));
  for (std::size_t i = 0; i < n; ++i) net.add(source, 1 + i, p.weights[i], 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      cost[i][j] = euclidean(p.points.row(i), q.points.row(j));
      arc[i][j] = net.add(1 + i, 1 + n + j, std::numeric_limits<double>::infinity(), cost[i][j]);
    }
  }
  for (std::size_t j = 0; j < m; ++j) net.add(1 + n + j, sink, q.weights[j], 0.0);
  net.min_cost_flow(source, sink);

  TransportPlan plan;
  plan.flow.assign(n, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const Edge& e = net.edge(1 + i, arc[i][j]);
      // Flow on an arc equals the capacity of its reverse arc.
      const double f = net.edge(e.to, e.rev).cap;
      plan.flow[i][j] = f;
      plan.cost += f * cost[i][j];
    }
  }
  return plan;
}

double exact_w1(const DiscreteDistribution& p, const DiscreteDistribution& q) {
  return solve_transport(p, q).cost;
}

DualGap dual_gap(const ScoreFn& critic, const DiscreteDistribution& p,
                 const DiscreteDistribution& q) {
  DualGap out;
  out.exact = exact_w1(p, q);
  const std::vector<double> dp = critic(p.points);
  const std::vector<double> dq = critic(q.points);
  for (std::size_t i = 0; i < p.size(); ++i) out.dual += p.weights[i] * dp[i];
  for (std::size_t j = 0; j < q.size(); ++j) out.dual -= q.weights[j] * dq[j];
  out.gap = out.exact - out.dual;

  std::vector<std::span<const double>> pts;
  std::vector<double> scores;
  for (std::size_t i = 0; i < p.size(); ++i) {
    pts.push_back(p.points.row(i));
    scores.push_back(dp[i]);
  }
  for (std::size_t j = 0; j < q.size(); ++j) {
    pts.push_back(q.points.row(j));
    scores.push_back(dq[j]);
  }
  for (std::size_t a = 0; a < pts.size(); ++a) {
    for (std::size_t b = a + 1; b < pts.size(); ++b) {
      const double d = euclidean(pts[a], pts[b]);
      if (d > 0.0) out.max_lipschitz = std::max(out.max_lipschitz, std::abs(scores[a] - scores[b]) / d);
    }
  }
  return out;
}

DualGap dual_gap(const ParamStore& params, const ModelSpec& spec, CriticId id,
                 const DiscreteDistribution& p, const DiscreteDistribution& q) {
  return dual_gap(
      [&](const NumArray& pts) { return critic_score_joint(params, spec, id, pts); }, p, q);
}

double plugin_mi(const std::vector<std::vector<double>>& counts) {
  const std::size_t rows = counts.size();
  if (rows == 0) fail(ErrorCode::kContractViolation, "plugin_mi: empty table");
  const std::size_t cols = counts[0].size();
  std::vector<double> row_sum(rows, 0.0), col_sum(cols, 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      row_sum[r] += counts[r][c];
      col_sum[c] += counts[r][c];
      total += counts[r][c];
    }
  }
  if (!(total > 0.0)) fail(ErrorCode::kContractViolation, "plugin_mi: empty table");
  double mi = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double n = counts[r][c];
      if (n > 0.0) mi += (n / total) * std::log(n * total / (row_sum[r] * col_sum[c]));
    }
  }
  return std::max(mi, 0.0);
}

double binned_mi(const NumArray& features, const std::vector<std::uint32_t>& labels,
                 std::size_t classes, std::size_t anchors) {
  if (features.rank() != 2 || features.rows() != labels.size()) {
    fail(ErrorCode::kContractViolation, "binned_mi: features " + shape_string(features.shape()) +
                                            " for " + std::to_string(labels.size()) + " labels");
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kMissingLabel) continue;
    if (labels[i] >= classes) fail(ErrorCode::kContractViolation, "binned_mi: label out of range");
    rows.push_back(i);
  }
  const std::size_t n = rows.size();
  if (n == 0) fail(ErrorCode::kContractViolation, "binned_mi: empty input");
  if (anchors < 2) fail(ErrorCode::kContractViolation, "binned_mi: need at least 2 anchors");
  const std::size_t m = std::min(anchors, n);
  std::vector<std::size_t> anchor_rows(m);
  for (std::size_t k = 0; k < m; ++k) anchor_rows[k] = rows[k * n / m];

  std::vector<std::vector<double>> counts(m, std::vector<double>(classes, 0.0));
  for (std::size_t i : rows) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < m; ++k) {
      double d = 0.0;
      const auto a = features.row(anchor_rows[k]);
      const auto x = features.row(i);
      for (std::size_t c = 0; c < a.size(); ++c) d += (a[c] - x[c]) * (a[c] - x[c]);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    counts[best][labels[i]] += 1.0;
  }
  return plugin_mi(counts);
}

}  // namespace wdis
