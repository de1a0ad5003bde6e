#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "wdis/guide_pipeline.hpp"
#include "wdis/probe_eval.hpp"
#include "wdis/synth_data.hpp"
#include "wdis/trainer.hpp"

namespace wdis {

struct DataConfig {
  double gamma = 0.5;
  double sigma = 0.1;
  std::size_t n_train = 20000;
  std::size_t n_val = 4000;
  double missing_bg_fraction = 0.0;
  // Foreground classes paired with a background in the corr/anticorr splits.
  std::size_t corr_pairs = 8;
};

struct GuideConfig {
  double strength = kDefaultStrength;
  double scale_min = kMinGuideScale;
  double scale_max = kMaxGuideScale;
  std::vector<std::string> backgrounds = default_backgrounds();
  std::string manifest;  // empty: none
  std::size_t parallelism = 2;
  std::size_t max_attempts = 3;
  int backoff_ms = 100;
  int timeout_ms = 60000;
};

struct EvalConfig {
  std::size_t mi_anchors = 16;
  // Rows in the fresh unbiased draw used for MI.
  std::size_t mi_samples = 200000;
};

// Everything a subcommand needs. Section names in JSON: seed, out_dir, model,
// train, data, probe, guides, eval.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  ModelSpec model;
  TrainConfig train;  // train.model and train.seed mirror the top level
  DataConfig data;
  ProbeConfig probe;
  GuideConfig guides;
  EvalConfig eval;

  FactorSpec factor_spec() const;
  // Pairing of the corr/anticorr splits: f -> f for the first corr_pairs classes.
  Pairing corr_pairing() const;
  // Pushes seed and model into the nested configs and checks every field.
  void resolve();
};

// Strict: unknown keys raise kConfigUnknownKey ("unknown key: <k>"), type or
// range problems raise kConfigInvalid naming the field. Missing keys take
// their defaults.
RunConfig parse_config(std::string_view json_text);
RunConfig load_config(const std::filesystem::path& path);
// Fully resolved document, every key present.
std::string config_to_json(const RunConfig& config, int indent = 2);

}  // namespace wdis
