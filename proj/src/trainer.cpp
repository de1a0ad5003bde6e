#include "wdis/trainer.hpp"

#include <cmath>

#include "wdis/error.hpp"

namespace wdis {

void AdamConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::kConfigInvalid, what); };
  if (!(lr > 0.0) || !std::isfinite(lr)) bad("train.lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) bad("train.beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) bad("train.beta2 must lie in [0, 1)");
  if (!(eps > 0.0)) bad("train.eps must be positive");
}

void TrainConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::kConfigInvalid, what); };
  model.validate();
  adam.validate();
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) bad("train.lambda must be finite and >= 0");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) bad("train.alpha must be finite and >= 0");
  if (!(critic_lr > 0.0) || !std::isfinite(critic_lr)) bad("train.critic_lr must be positive");
  if (critic_ratio < 1) bad("train.critic_ratio must be at least 1");
  if (batch < 2) bad("train.batch must be at least 2");
  if (snapshot_interval < 1) bad("train.snapshot_interval must be at least 1");
}

AdamConfig TrainConfig::critic_adam() const {
  AdamConfig a = adam;
  a.lr = critic_lr;
  return a;
}

OptimizerState OptimizerState::zeros(const ParamStore& params,
                                     const std::vector<std::string>& names) {
  OptimizerState s;
  s.names = names;
  for (const auto& n : names) {
    s.m.emplace_back(params.get(n).shape());
    s.v.emplace_back(params.get(n).shape());
  }
  return s;
}

void adam_step(ParamStore& params, const std::vector<std::string>& names,
               const std::vector<NumArray>& grads, OptimizerState& state, const AdamConfig& adam) {
  if (names != state.names || grads.size() != names.size()) {
    fail(ErrorCode::kContractViolation, "adam_step: gradients do not match the optimizer group");
  }
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (grads[k].shape() != params.get(names[k]).shape()) {
      fail(ErrorCode::kContractViolation, "adam_step: gradient shape " +
                                              shape_string(grads[k].shape()) + " for " +
                                              names[k] + " " +
                                              shape_string(params.get(names[k]).shape()));
    }
    if (!grads[k].all_finite()) {
      fail(ErrorCode::kTrainingDiverged, "non-finite gradient for " + names[k]);
    }
  }
  state.step += 1;
  state.beta1_power *= adam.beta1;
  state.beta2_power *= adam.beta2;
  const double c1 = 1.0 - state.beta1_power;
  const double c2 = 1.0 - state.beta2_power;
  for (std::size_t k = 0; k < names.size(); ++k) {
    NumArray& theta = params.mutable_value(names[k]);
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    const auto g = grads[k].data();
    auto t = theta.data();
    for (std::size_t i = 0; i < t.size(); ++i) {
      m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * g[i];
      v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * (g[i] * g[i]);
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      t[i] -= adam.lr * m_hat / (std::sqrt(v_hat) + adam.eps);
    }
  }
  params.bump_version();
}

std::vector<std::string> critic_param_names(const ParamStore& params) {
  return params.names_with_prefix("critic_");
}

std::vector<std::string> model_param_names(const ParamStore& params) {
  std::vector<std::string> out;
  for (const auto& n : params.names()) {
    if (!n.starts_with("critic_")) out.push_back(n);
  }
  return out;
}

TrainState TrainState::fresh(const TrainConfig& config) {
  config.validate();
  TrainState s;
  s.params = init_params(config.model, config.seed);
  s.critic_opt = OptimizerState::zeros(s.params, critic_param_names(s.params));
  s.model_opt = OptimizerState::zeros(s.params, model_param_names(s.params));
  // Training draws use a stream distinct from the initialization stream.
  s.rng_state = Rng(config.seed ^ 0xD1B54A32D192ED03ULL).next_u64();
  return s;
}

namespace {

// Product-side labels: a shuffle of `labels`, or fresh labels of `field`
// drawn from the dataset rows that carry one.
NumArray product_labels(const NumArray& labels, const Dataset& data, bool background,
                        const TrainConfig& config, Rng& rng) {
  if (config.product_mode == ProductMode::kShuffle) return shuffle_labels(labels, rng);
  std::vector<std::uint32_t> drawn;
  drawn.reserve(labels.rows());
  while (drawn.size() < labels.rows()) {
    const auto i = static_cast<std::size_t>(rng.uniform_int(data.size()));
    if (!background) {
      drawn.push_back(data.fg[i]);
    } else if (data.has_bg(i)) {
      drawn.push_back(data.bg[i]);
    }
  }
  return one_hot(drawn, labels.cols());
}

struct CriticGrads {
  LossBreakdown breakdown;
  std::vector<std::string> names;
  std::vector<NumArray> grads;
};

CriticGrads critic_losses(const ParamStore& params, const Dataset& data, const TrainConfig& config,
                          Rng& rng) {
  const ModelSpec& spec = config.model;
  const ExampleBatch ex = sample_joint(data, config.batch, rng);
  const PartitionedFeatures z = extract(params, spec, ex.x);
  CriticGrads out;
  LossBreakdown& b = out.breakdown;
  b.kind = LossKind::kCritic;
  b.lambda = config.lambda;

  auto run = [&](CriticId id, const NumArray& features, const NumArray& labels, bool background) {
    const JointBatch joint = make_joint(features, labels);
    const JointBatch product =
        pair_independent(joint, product_labels(labels, data, background, config, rng));
    const InterpolatedBatch mixed = make_interpolates(joint, product, rng);
    CriticLoss l = critic_loss(params, spec, id, joint, product, mixed, config.lambda);
    b.zero_norm_rows += l.zero_norm_rows;
    for (std::size_t k = 0; k < l.names.size(); ++k) {
      out.names.push_back(l.names[k]);
      out.grads.push_back(std::move(l.grads[k]));
    }
    return l;
  };

  const auto rows = ex.rows_with_bg();
  if (!rows.empty()) {
    std::vector<std::uint32_t> bg;
    for (auto r : rows) bg.push_back(ex.bg[r]);
    const CriticLoss l = run(CriticId::kFg, take_rows(z.z_fg, rows), one_hot(bg, spec.k_bg), true);
    b.w_fg = l.wasserstein;
    b.gp_fg = l.penalty;
  } else {
    for (const auto& n : params.names_with_prefix(critic_prefix(CriticId::kFg))) {
      out.names.push_back(n);
      out.grads.emplace_back(params.get(n).shape());
    }
  }
  const CriticLoss l = run(CriticId::kBg, z.z_bg, one_hot(ex.fg, spec.k_fg), false);
  b.w_bg = l.wasserstein;
  b.gp_bg = l.penalty;
  b.total = b.recompute_total();
  return out;
}

ExtractorLoss extractor_losses(const ParamStore& params, const Dataset& data,
                               const TrainConfig& config, Rng& rng) {
  const ModelSpec& spec = config.model;
  const ExampleBatch ex = sample_joint(data, config.batch, rng);
  ExtractorInputs in;
  in.x = ex.x;
  in.fg = ex.fg;
  in.bg = ex.bg;
  if (config.objective == Objective::kDisentangle) {
    std::vector<std::uint32_t> bg;
    for (auto r : ex.rows_with_bg()) bg.push_back(ex.bg[r]);
    in.fg_product = product_labels(one_hot(ex.fg, spec.k_fg), data, false, config, rng);
    in.bg_product = product_labels(one_hot(bg, spec.k_bg), data, true, config, rng);
  }
  return extractor_loss(params, spec, in, config.alpha, config.objective);
}

}  // namespace

LossBreakdown train_critics(TrainState& state, const Dataset& data, const TrainConfig& config,
                            Rng& rng) {
  CriticGrads g = critic_losses(state.params, data, config, rng);
  adam_step(state.params, g.names, g.grads, state.critic_opt, config.critic_adam());
  return g.breakdown;
}

LossBreakdown train_extractor(TrainState& state, const Dataset& data, const TrainConfig& config,
                              Rng& rng) {
  ExtractorLoss l = extractor_losses(state.params, data, config, rng);
  adam_step(state.params, l.names, l.grads, state.model_opt, config.adam);
  return l.breakdown;
}

MetricsRecord evaluate_losses(const TrainState& state, const Dataset& data,
                              const TrainConfig& config, Rng& rng) {
  MetricsRecord rec;
  rec.iteration = state.iteration;
  if (config.objective == Objective::kDisentangle) {
    rec.critic = critic_losses(state.params, data, config, rng).breakdown;
  }
  rec.extractor = extractor_losses(state.params, data, config, rng).breakdown;
  return rec;
}

TrainResult run_training(const TrainConfig& config, const Dataset& data,
                         std::optional<TrainState> resume, const MetricsSink& sink) {
  config.validate();
  if (data.size() == 0) fail(ErrorCode::kContractViolation, "run_training: empty dataset");
  if (data.k_fg != config.model.k_fg || data.k_bg != config.model.k_bg) {
    fail(ErrorCode::kConfigInvalid, "dataset class counts (" + std::to_string(data.k_fg) + ", " +
                                        std::to_string(data.k_bg) + ") do not match the model");
  }
  if (data.features.cols() != config.model.d_x) {
    fail(ErrorCode::kConfigInvalid, "dataset width " + std::to_string(data.features.cols()) +
                                        " does not match model.d_x");
  }
  TrainResult result;
  result.state = resume ? std::move(*resume) : TrainState::fresh(config);
  TrainState& state = result.state;
  auto emit = [&](MetricsRecord rec) {
    if (sink) sink(rec);
    result.history.push_back(std::move(rec));
  };

  while (state.iteration < config.iterations) {
    TrainState last_good = state;
    Rng rng;
    rng.set_state(state.rng_state);
    MetricsRecord rec;
    try {
      if (config.objective == Objective::kDisentangle) {
        for (std::size_t k = 0; k < config.critic_ratio; ++k) {
          rec.critic = train_critics(state, data, config, rng);
        }
      }
      rec.extractor = train_extractor(state, data, config, rng);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNonFinite && e.code() != ErrorCode::kTrainingDiverged) throw;
      result.aborted = true;
      result.abort_reason = "iteration " + std::to_string(state.iteration) + ": " + e.what();
      state = std::move(last_good);
      return result;
    }
    state.rng_state = rng.state();
    state.iteration += 1;
    rec.iteration = state.iteration;
    if (state.iteration % config.snapshot_interval == 0) emit(std::move(rec));
  }

  Rng eval_rng(config.seed ^ 0x8CB92BA72F3D8DD7ULL);
  MetricsRecord fin = evaluate_losses(state, data, config, eval_rng);
  fin.final = true;
  emit(std::move(fin));
  return result;
}

CriticFit fit_critic(const ModelSpec& spec, CriticId id, const NumArray& p, const NumArray& q,
                     double lambda, std::size_t steps, const AdamConfig& adam, std::uint64_t seed) {
  if (p.shape() != q.shape()) {
    fail(ErrorCode::kContractViolation, "fit_critic: point sets " + shape_string(p.shape()) +
                                            " and " + shape_string(q.shape()));
  }
  adam.validate();
  CriticFit fit;
  fit.params = init_params(spec, seed);
  const auto names = fit.params.names_with_prefix(critic_prefix(id));
  OptimizerState opt = OptimizerState::zeros(fit.params, names);
  Rng rng(seed ^ 0x2545F4914F6CDD1DULL);
  const std::size_t n = p.rows();
  for (std::size_t step = 0; step < steps; ++step) {
    const NumArray partner = take_rows(q, uniform_permutation(n, rng));
    NumArray mixed(p.shape());
    for (std::size_t r = 0; r < n; ++r) {
      const double e = rng.uniform();
      for (std::size_t c = 0; c < p.cols(); ++c) {
        mixed.at(r, c) = e * partner.at(r, c) + (1.0 - e) * p.at(r, c);
      }
    }
    CriticLoss l = critic_loss_inputs(fit.params, spec, id, p, q, mixed, lambda);
    fit.loss_trace.push_back(l.loss);
    adam_step(fit.params, names, l.grads, opt, adam);
  }
  return fit;
}

}  // namespace wdis
