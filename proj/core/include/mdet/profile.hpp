#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mdet/train.hpp"

namespace mdet {

struct BlockTiming {
  std::string block;
  Shape input;
  double forward_ms = 0.0;   // mean over repetitions
  double backward_ms = 0.0;  // mean over repetitions
};

// Times each block of the detector in isolation on one training batch of the configured
// scene set: stem, every downsampler and C3k2 block, DB-CASA when enabled, the head, the
// detection loss, and finally the whole forward/backward step. Weights come from
// build_model(cfg.model, cfg.seed), so inputs are identical across calls.
std::vector<BlockTiming> profile_blocks(const ExperimentConfig& cfg, std::size_t repetitions);

}  // namespace mdet
