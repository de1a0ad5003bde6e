#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wdis/dataset.hpp"
#include "wdis/models.hpp"

namespace wdis {

enum class Slice { kFg, kBg, kAll };
enum class Target { kFg, kBg };

std::string_view slice_name(Slice s);
std::string_view target_name(Target t);

struct ProbeConfig {
  double lr = 1e-2;
  std::size_t steps = 2000;
  std::size_t batch = 128;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LinearProbe {
  NumArray weight;  // [classes, features]
  NumArray bias;    // [1, classes]
};

// Frozen features of `x` restricted to a slice.
NumArray slice_features(const ParamStore& params, const ModelSpec& spec, const NumArray& x,
                        Slice slice);

// Adam on mean softmax cross-entropy over uniformly drawn minibatches.
LinearProbe train_probe(const NumArray& features, const std::vector<std::uint32_t>& labels,
                        std::size_t classes, const ProbeConfig& config);

NumArray probe_logits(const LinearProbe& probe, const NumArray& features);

struct Accuracy {
  double top1 = 0.0;
  double top5 = -1.0;  // -1 when there are fewer than 5 classes
  std::size_t n = 0;
};

// Argmax ties go to the lowest class index; top-5 counts the target when fewer
// than 5 classes rank ahead of it under the same tie rule.
Accuracy accuracy(const NumArray& logits, const std::vector<std::uint32_t>& labels);

// Labels of `target`, skipping rows without one. `rows` receives the kept
// row positions.
std::vector<std::uint32_t> target_labels(const Dataset& data, Target target,
                                         std::vector<std::size_t>& rows);

struct ProbeResult {
  Slice input = Slice::kFg;
  Target target = Target::kFg;
  Accuracy eval;
};

// Probe trained on `train` and scored on `eval`.
ProbeResult run_probe(const ParamStore& params, const ModelSpec& spec, Slice input, Target target,
                      const Dataset& train, const Dataset& eval, const ProbeConfig& config);

// The four slice/label pairings.
struct ProbeGrid {
  ProbeResult fg_from_fg;
  ProbeResult fg_from_bg;
  ProbeResult bg_from_bg;
  ProbeResult bg_from_fg;
};

ProbeGrid probe_grid(const ParamStore& params, const ModelSpec& spec, const Dataset& train,
                     const Dataset& eval, const ProbeConfig& config);

struct CorrSplits {
  Dataset train;          // corr
  Dataset val_corr;       // corr
  Dataset val_anticorr;   // anticorr
  Dataset val_unbiased;   // unbiased over the paired foreground classes
};

struct CorrRow {
  std::string variant;
  double corr_fg = 0.0;
  double anticorr_fg = 0.0;
  double corr_bg = 0.0;
  double anticorr_bg = 0.0;
  double unbiased_fg = 0.0;
  double average = 0.0;  // unweighted mean of the five cells
};

// Rows "Correct" (slices of the disentangled extractor), "All" (its full
// output) and "Baseline" (full output of the CE-only extractor).
std::vector<CorrRow> corr_experiment(const ParamStore& disentangled, const ParamStore& baseline,
                                     const ModelSpec& spec, const CorrSplits& splits,
                                     const ProbeConfig& config);

double mean_of_five(double a, double b, double c, double d, double e);

}  // namespace wdis
