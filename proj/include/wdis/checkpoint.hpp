#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wdis/models.hpp"
#include "wdis/trainer.hpp"

namespace wdis {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

// Optimizer moments, rng position and iteration count; the parameters live
// in Checkpoint::params.
struct ResumeState {
  OptimizerState critic_opt;
  OptimizerState model_opt;
  std::uint64_t rng_state = 0;
  std::size_t iteration = 0;
};

struct Checkpoint {
  std::string config_json;
  ParamStore params;
  std::optional<ResumeState> resume;

  static Checkpoint from_state(std::string config_json, const TrainState& state);
  TrainState to_state() const;  // requires `resume`
};

// "WDISCKPT", u32 version, config, parameters (name, shape, f64 payload),
// optional resume block, SHA-256 trailer.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
// Throws kCheckpointVersion for an unknown version, kCheckpointCorrupt for a
// bad checksum or malformed body.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace wdis
