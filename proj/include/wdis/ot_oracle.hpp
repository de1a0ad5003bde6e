#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "wdis/models.hpp"
#include "wdis/num_array.hpp"

namespace wdis {

// Weighted point cloud; rows of `points` are support points.
struct DiscreteDistribution {
  NumArray points;
  std::vector<double> weights;

  static DiscreteDistribution uniform(NumArray points);
  // Weights non-negative and summing to 1 within 1e-12, points finite.
  void validate() const;
  std::size_t size() const { return weights.size(); }
};

inline constexpr std::size_t kMaxSupport = 64;

// Euclidean ground cost between every pair of rows.
double euclidean(std::span<const double> a, std::span<const double> b);

// Optimal transport plan, flow[i][j] moved from p_i to q_j.
struct TransportPlan {
  double cost = 0.0;
  std::vector<std::vector<double>> flow;
};

// Exact W1 by successive shortest paths on the transportation network.
// Supports are limited to kMaxSupport points each.
TransportPlan solve_transport(const DiscreteDistribution& p, const DiscreteDistribution& q);
double exact_w1(const DiscreteDistribution& p, const DiscreteDistribution& q);

using ScoreFn = std::function<std::vector<double>(const NumArray&)>;

struct DualGap {
  double dual = 0.0;   // E_p[D] - E_q[D]
  double exact = 0.0;
  double gap = 0.0;    // exact - dual
  double max_lipschitz = 0.0;  // max |D(a) - D(b)| / |a - b| over support pairs
};

DualGap dual_gap(const ScoreFn& critic, const DiscreteDistribution& p,
                 const DiscreteDistribution& q);
DualGap dual_gap(const ParamStore& params, const ModelSpec& spec, CriticId id,
                 const DiscreteDistribution& p, const DiscreteDistribution& q);

// Plug-in mutual information (nats) of a count table [rows][cols].
double plugin_mi(const std::vector<std::vector<double>>& counts);

// Rows k*n/m (k < m) serve as anchors; each feature row goes to its nearest
// anchor (ties to the lowest index) and the bucket/label table is scored by
// plugin_mi. Rows whose label is kMissingLabel are skipped.
double binned_mi(const NumArray& features, const std::vector<std::uint32_t>& labels,
                 std::size_t classes, std::size_t anchors);

}  // namespace wdis
