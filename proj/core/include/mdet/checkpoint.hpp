#pragma once

#include <filesystem>
#include <string>

#include "mdet/run_config.hpp"
#include "mdet/train.hpp"

namespace mdet {

// Directory layout:
//   manifest.json       format, version, config hash, epoch, toggles, topology,
//                       parameter and momentum name -> file maps with shapes,
//                       latest metrics and the per-epoch history
//   config.json         canonical run configuration
//   params/<name>.tnsr  one f32 TensorFile per parameter (running statistics included)
//   momentum/<name>.tnsr
struct Checkpoint {
  RunConfig config;
  TrainState state;
  std::string config_hash;
};

// Writes into a sibling temporary directory and renames it over `dir`.
void save_checkpoint(const std::filesystem::path& dir, const RunConfig& cfg, const TrainState& state);

// Throws FormatError when a manifest entry is missing, mis-shaped or unreadable.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// As load_checkpoint, but refuses with ConfigError (key "config_hash") when the stored
// hash differs from config_hash(cfg).
TrainState load_resume_state(const std::filesystem::path& dir, const RunConfig& cfg);

}  // namespace mdet
