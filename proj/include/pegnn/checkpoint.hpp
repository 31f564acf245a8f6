#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "pegnn/autodiff.hpp"
#include "pegnn/egnn.hpp"

namespace pegnn {

struct CheckpointMeta {
  std::string mode = "deterministic";
  std::uint64_t seed = 0;
  int member = 0;
};

struct Checkpoint {
  EgnnConfig config;
  ad::ParamVector params;
  CheckpointMeta meta;
};

// Checkpoint file
//
// Line 1: single-line JSON header terminated by '\n':
//   {"format":"pegnn-checkpoint","ordering_version":1,
//    "config":{"n_layers":L,"hidden":H,"noise_dim":Z,"activation":"silu"},
//    "param_count":P,"mode":...,"seed":...,"member":...}
// Then P little-endian float64 values in the canonical order of
// make_param_layout(config).

void write_checkpoint(const std::filesystem::path& path, const EgnnConfig& config,
                      const ad::ParamVector& params, const CheckpointMeta& meta);

/// Throws IoError on malformed files and CompatibilityError when the declared
/// parameter count disagrees with the configuration's layout.
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::string egnn_config_json(const EgnnConfig& config);

}  // namespace pegnn
