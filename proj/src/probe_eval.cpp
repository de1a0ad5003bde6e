#include "wdis/probe_eval.hpp"

#include <cmath>

#include "wdis/error.hpp"
#include "wdis/rng.hpp"
#include "wdis/tape.hpp"

namespace wdis {

using ad::Tape;
using ad::Var;

std::string_view slice_name(Slice s) {
  switch (s) {
    case Slice::kFg: return "z_fg";
    case Slice::kBg: return "z_bg";
    case Slice::kAll: return "all";
  }
  return "?";
}

std::string_view target_name(Target t) { return t == Target::kFg ? "l_fg" : "l_bg"; }

void ProbeConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::kConfigInvalid, what); };
  if (!(lr > 0.0)) bad("probe.lr must be positive");
  if (steps == 0) bad("probe.steps must be positive");
  if (batch == 0) bad("probe.batch must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    bad("probe betas must lie in [0, 1)");
  }
}

NumArray slice_features(const ParamStore& params, const ModelSpec& spec, const NumArray& x,
                        Slice slice) {
  if (slice == Slice::kAll) return extract_full(params, spec, x);
  PartitionedFeatures z = extract(params, spec, x);
  return slice == Slice::kFg ? std::move(z.z_fg) : std::move(z.z_bg);
}

LinearProbe train_probe(const NumArray& features, const std::vector<std::uint32_t>& labels,
                        std::size_t classes, const ProbeConfig& config) {
  config.validate();
  if (features.rank() != 2 || features.rows() != labels.size() || labels.empty()) {
    fail(ErrorCode::kContractViolation, "train_probe: " + shape_string(features.shape()) +
                                            " features for " + std::to_string(labels.size()) +
                                            " labels");
  }
  const std::size_t d = features.cols();
  LinearProbe probe{NumArray({classes, d}), NumArray({1, classes})};
  std::vector<NumArray> m = {NumArray({classes, d}), NumArray({1, classes})};
  std::vector<NumArray> v = m;
  double b1 = 1.0, b2 = 1.0;
  Rng rng(config.seed);
  std::vector<std::size_t> rows(config.batch);
  std::vector<std::uint32_t> batch_labels(config.batch);
  for (std::size_t step = 0; step < config.steps; ++step) {
    for (std::size_t i = 0; i < config.batch; ++i) {
      rows[i] = static_cast<std::size_t>(rng.uniform_int(labels.size()));
      batch_labels[i] = labels[rows[i]];
    }
    Tape tape;
    const Var w = tape.parameter(probe.weight);
    const Var b = tape.parameter(probe.bias);
    const Var x = tape.constant(take_rows(features, rows));
    const Var ones = tape.constant(NumArray::filled({config.batch, 1}, 1.0));
    const Var logits = tape.add(tape.matmul(x, w, false, true), tape.matmul(ones, b));
    const Var loss = tape.softmax_cross_entropy(logits, tape.constant(one_hot(batch_labels, classes)));
    const Var wrt[] = {w, b};
    const auto grads = tape.grad(loss, wrt);
    b1 *= config.beta1;
    b2 *= config.beta2;
    NumArray* targets[] = {&probe.weight, &probe.bias};
    for (std::size_t k = 0; k < 2; ++k) {
      auto t = targets[k]->data();
      auto mk = m[k].data();
      auto vk = v[k].data();
      const auto g = grads[k].data();
      for (std::size_t i = 0; i < t.size(); ++i) {
        mk[i] = config.beta1 * mk[i] + (1.0 - config.beta1) * g[i];
        vk[i] = config.beta2 * vk[i] + (1.0 - config.beta2) * (g[i] * g[i]);
        const double mh = mk[i] / (1.0 - b1);
        const double vh = vk[i] / (1.0 - b2);
        t[i] -= config.lr * mh / (std::sqrt(vh) + config.eps);
      }
    }
  }
  return probe;
}

NumArray probe_logits(const LinearProbe& probe, const NumArray& features) {
  Tape tape;
  const Var ones = tape.constant(NumArray::filled({features.rows(), 1}, 1.0));
  return tape.value(tape.add(
      tape.matmul(tape.constant(features), tape.constant(probe.weight), false, true),
      tape.matmul(ones, tape.constant(probe.bias))));
}

Accuracy accuracy(const NumArray& logits, const std::vector<std::uint32_t>& labels) {
  if (logits.rank() != 2 || logits.rows() != labels.size()) {
    fail(ErrorCode::kContractViolation, "accuracy: logits " + shape_string(logits.shape()) +
                                            " for " + std::to_string(labels.size()) + " labels");
  }
  Accuracy acc;
  acc.n = labels.size();
  if (acc.n == 0) return acc;
  const std::size_t k = logits.cols();
  std::size_t hit1 = 0, hit5 = 0;
  for (std::size_t r = 0; r < acc.n; ++r) {
    const auto row = logits.row(r);
    const std::size_t t = labels[r];
    if (t >= k) fail(ErrorCode::kContractViolation, "accuracy: label out of range");
    std::size_t ahead = 0;
    for (std::size_t c = 0; c < k; ++c) {
      if (row[c] > row[t] || (row[c] == row[t] && c < t)) ++ahead;
    }
    if (ahead == 0) ++hit1;
    if (ahead < 5) ++hit5;
  }
  acc.top1 = static_cast<double>(hit1) / static_cast<double>(acc.n);
  if (k >= 5) acc.top5 = static_cast<double>(hit5) / static_cast<double>(acc.n);
  return acc;
}

std::vector<std::uint32_t> target_labels(const Dataset& data, Target target,
                                         std::vector<std::size_t>& rows) {
  std::vector<std::uint32_t> out;
  rows.clear();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::uint32_t l = target == Target::kFg ? data.fg[i] : data.bg[i];
    if (l == kMissingLabel) continue;
    rows.push_back(i);
    out.push_back(l);
  }
  return out;
}

namespace {

std::size_t class_count(const ModelSpec& spec, Target t) {
  return t == Target::kFg ? spec.k_fg : spec.k_bg;
}

struct Labeled {
  NumArray features;
  std::vector<std::uint32_t> labels;
};

Labeled labeled_features(const ParamStore& params, const ModelSpec& spec, Slice input,
                         Target target, const Dataset& data) {
  std::vector<std::size_t> rows;
  Labeled out;
  out.labels = target_labels(data, target, rows);
  out.features = slice_features(params, spec, take_rows(data.features, rows), input);
  return out;
}

}  // namespace

ProbeResult run_probe(const ParamStore& params, const ModelSpec& spec, Slice input, Target target,
                      const Dataset& train, const Dataset& eval, const ProbeConfig& config) {
  const Labeled tr = labeled_features(params, spec, input, target, train);
  const Labeled ev = labeled_features(params, spec, input, target, eval);
  if (tr.labels.empty() || ev.labels.empty()) {
    fail(ErrorCode::kContractViolation, "probe " + std::string(target_name(target)) + " from " +
                                            std::string(slice_name(input)) +
                                            ": no labelled rows");
  }
  const LinearProbe probe = train_probe(tr.features, tr.labels, class_count(spec, target), config);
  return {input, target, accuracy(probe_logits(probe, ev.features), ev.labels)};
}

ProbeGrid probe_grid(const ParamStore& params, const ModelSpec& spec, const Dataset& train,
                     const Dataset& eval, const ProbeConfig& config) {
  return {run_probe(params, spec, Slice::kFg, Target::kFg, train, eval, config),
          run_probe(params, spec, Slice::kBg, Target::kFg, train, eval, config),
          run_probe(params, spec, Slice::kBg, Target::kBg, train, eval, config),
          run_probe(params, spec, Slice::kFg, Target::kBg, train, eval, config)};
}

double mean_of_five(double a, double b, double c, double d, double e) {
  return (a + b + c + d + e) / 5.0;
}

std::vector<CorrRow> corr_experiment(const ParamStore& disentangled, const ParamStore& baseline,
                                     const ModelSpec& spec, const CorrSplits& splits,
                                     const ProbeConfig& config) {
  struct Variant {
    const char* name;
    const ParamStore* params;
    Slice fg_slice;
    Slice bg_slice;
  };
  const Variant variants[] = {{"Correct", &disentangled, Slice::kFg, Slice::kBg},
                              {"All", &disentangled, Slice::kAll, Slice::kAll},
                              {"Baseline", &baseline, Slice::kAll, Slice::kAll}};
  std::vector<CorrRow> rows;
  for (const auto& v : variants) {
    const ParamStore& p = *v.params;
    auto score = [&](Slice s, Target t, const LinearProbe& probe, const Dataset& d) {
      const Labeled l = labeled_features(p, spec, s, t, d);
      return accuracy(probe_logits(probe, l.features), l.labels).top1;
    };
    const Labeled fg_train = labeled_features(p, spec, v.fg_slice, Target::kFg, splits.train);
    const Labeled bg_train = labeled_features(p, spec, v.bg_slice, Target::kBg, splits.train);
    const LinearProbe fg = train_probe(fg_train.features, fg_train.labels, spec.k_fg, config);
    const LinearProbe bg = train_probe(bg_train.features, bg_train.labels, spec.k_bg, config);
    CorrRow row;
    row.variant = v.name;
    row.corr_fg = score(v.fg_slice, Target::kFg, fg, splits.val_corr);
    row.anticorr_fg = score(v.fg_slice, Target::kFg, fg, splits.val_anticorr);
    row.corr_bg = score(v.bg_slice, Target::kBg, bg, splits.val_corr);
    row.anticorr_bg = score(v.bg_slice, Target::kBg, bg, splits.val_anticorr);
    row.unbiased_fg = score(v.fg_slice, Target::kFg, fg, splits.val_unbiased);
    row.average =
        mean_of_five(row.corr_fg, row.anticorr_fg, row.corr_bg, row.anticorr_bg, row.unbiased_fg);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace wdis
