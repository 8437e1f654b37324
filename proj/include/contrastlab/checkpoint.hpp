#pragma once

// Versioned JSON checkpoint container: every parameter tensor,
// log_temperature, optimizer moments, the global step and the run config
// hash. Doubles are serialized losslessly so resume is bit-exact.

#include <cstdint>
#include <string>

#include "contrastlab/model.hpp"
#include "contrastlab/objective.hpp"

namespace contrastlab {

struct CheckpointState {
  EncoderParams params;
  OptimizerState optimizer;
  std::int64_t global_step = 0;
  int epoch = 0;
  std::string config_hash;
};

void save_checkpoint_state(const CheckpointState& state, const std::string& path);
CheckpointState load_checkpoint_state(const std::string& path);

}  // namespace contrastlab
