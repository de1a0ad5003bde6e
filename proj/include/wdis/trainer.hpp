#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "wdis/dataset.hpp"
#include "wdis/models.hpp"
#include "wdis/objectives.hpp"
#include "wdis/rng.hpp"
#include "wdis/sampling.hpp"

namespace wdis {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double eps = 1e-8;

  void validate() const;
};

struct TrainConfig {
  ModelSpec model;
  double lambda = 10.0;
  double alpha = 1.0;
  std::size_t critic_ratio = 5;
  // adam.lr drives extractor and heads; the critics use critic_lr with the
  // same betas and eps.
  AdamConfig adam;
  double critic_lr = 1e-3;
  std::size_t iterations = 5000;
  std::size_t batch = 64;
  std::uint64_t seed = 0;
  std::size_t snapshot_interval = 100;
  Objective objective = Objective::kDisentangle;
  ProductMode product_mode = ProductMode::kShuffle;

  AdamConfig critic_adam() const;
  void validate() const;
};

// Adam moments for one parameter group, in the group's name order.
struct OptimizerState {
  std::vector<std::string> names;
  std::vector<NumArray> m;
  std::vector<NumArray> v;
  std::uint64_t step = 0;
  // beta1^step and beta2^step, kept as running products.
  double beta1_power = 1.0;
  double beta2_power = 1.0;

  static OptimizerState zeros(const ParamStore& params, const std::vector<std::string>& names);
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

// One bias-corrected Adam update of the named parameters. A non-finite
// gradient aborts with kTrainingDiverged naming the parameter; nothing is
// modified in that case.
void adam_step(ParamStore& params, const std::vector<std::string>& names,
               const std::vector<NumArray>& grads, OptimizerState& state, const AdamConfig& adam);

std::vector<std::string> critic_param_names(const ParamStore& params);
std::vector<std::string> model_param_names(const ParamStore& params);

struct TrainState {
  ParamStore params;
  OptimizerState critic_opt;
  OptimizerState model_opt;
  std::uint64_t rng_state = 0;
  std::size_t iteration = 0;

  static TrainState fresh(const TrainConfig& config);
  friend bool operator==(const TrainState&, const TrainState&) = default;
};

// Draws fresh joint, product and interpolate batches, takes one Adam step on
// each critic and returns the critic-side breakdown. Extractor and heads are
// read only.
LossBreakdown train_critics(TrainState& state, const Dataset& data, const TrainConfig& config,
                            Rng& rng);
// One Adam step on extractor and heads; critics are read only.
LossBreakdown train_extractor(TrainState& state, const Dataset& data, const TrainConfig& config,
                              Rng& rng);

struct MetricsRecord {
  std::size_t iteration = 0;
  bool final = false;
  LossBreakdown critic;
  LossBreakdown extractor;
};

struct TrainResult {
  TrainState state;
  std::vector<MetricsRecord> history;
  bool aborted = false;
  std::string abort_reason;
};

using MetricsSink = std::function<void(const MetricsRecord&)>;

// Runs from `resume` (or a fresh state) up to config.iterations extractor
// steps. A record is taken every snapshot_interval steps and one final record
// evaluates the losses on a held-out draw without updating anything. On a
// non-finite value the run stops and returns the last good state.
TrainResult run_training(const TrainConfig& config, const Dataset& data,
                         std::optional<TrainState> resume = std::nullopt,
                         const MetricsSink& sink = {});

// Losses of the current parameters on one fresh draw; no updates.
MetricsRecord evaluate_losses(const TrainState& state, const Dataset& data,
                              const TrainConfig& config, Rng& rng);

// Trains critic `id` alone to separate two equal-size uniform point sets given
// as rows of concat(feature, label). Each step uses every point, pairs the
// sets by a fresh random permutation for the interpolates.
struct CriticFit {
  ParamStore params;
  std::vector<double> loss_trace;
};

CriticFit fit_critic(const ModelSpec& spec, CriticId id, const NumArray& p, const NumArray& q,
                     double lambda, std::size_t steps, const AdamConfig& adam, std::uint64_t seed);

}  // namespace wdis
