#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "wdis/error.hpp"
#include "wdis/ot_oracle.hpp"
#include "wdis/run_config.hpp"

namespace wdis {

// Output layout below the run directory.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path data_dir() const { return root / "data"; }
  std::filesystem::path split(std::string_view name) const;  // data/<name>.bin
  std::filesystem::path train_dir(Objective objective) const;
  std::filesystem::path checkpoint(Objective objective) const;
  std::filesystem::path metrics(Objective objective) const;
  std::filesystem::path probe_report() const { return root / "probe.json"; }
  std::filesystem::path corr_csv() const { return root / "corr.csv"; }
  std::filesystem::path corr_json() const { return root / "corr.json"; }
  std::filesystem::path oracle_report() const { return root / "oracle.json"; }
  std::filesystem::path guides_dir() const { return root / "guides"; }
  std::filesystem::path report() const { return root / "report.json"; }
  std::filesystem::path timing(std::string_view command) const;
};

inline const std::vector<std::string>& split_names() {
  static const std::vector<std::string> names = {
      "train", "val", "corr_train", "corr_val", "anticorr_val", "unbiased_val"};
  return names;
}

struct Splits {
  Dataset train, val, corr_train, corr_val, anticorr_val, unbiased_val;
};

// Every split generated from config.seed. Missing backgrounds apply to the
// training split only.
Splits generate_splits(const RunConfig& config);

// eval.mi_samples unbiased rows from a stream separate from every split.
Dataset mi_eval_set(const RunConfig& config);

struct MiReport {
  double z_fg_l_bg = 0.0;
  double z_bg_l_fg = 0.0;
};

MiReport measure_mi(const ParamStore& params, const RunConfig& config, const Dataset& eval_set);

// 8-point distribution pairs (W1 near 1.6) in the foreground critic's input
// space and the dual estimate of a critic fitted to each with train.adam.
struct DualCheckRow {
  double exact = 0.0;
  double dual = 0.0;
  double rel_error = 0.0;
  double max_lipschitz = 0.0;
};

std::vector<std::pair<DiscreteDistribution, DiscreteDistribution>> oracle_pairs(
    const ModelSpec& spec, std::uint64_t seed, std::size_t count = 5, std::size_t points = 8);
std::vector<DualCheckRow> dual_checks(const RunConfig& config, std::size_t steps = 2000);

struct CommandOptions {
  std::string name;
  RunConfig config;  // out_dir already resolved
  std::string backend = "identity";
  std::optional<std::filesystem::path> data_dir;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> resume;
};

const std::vector<std::string>& command_names();

// Runs one subcommand, writing artifacts under config.out_dir and a short JSON
// summary to `out`. Failures throw Error.
void run_command(const CommandOptions& options, std::ostream& out);

// {"error": {"code": ..., "message": ...}}
std::string error_json(ErrorCode code, const std::string& message);

}  // namespace wdis
