#pragma once

#include <cstdint>
#include <string>

#include "flowcast/model.hpp"
#include "flowcast/rollout.hpp"
#include "flowcast/training.hpp"

namespace flowcast {

/// Dataset-generation section of a run config.
struct DataConfig {
  int grid = 100;
  int steps = 20;
  int n_samples = 64;
  uint64_t seed = 0;
  void validate() const;
};

/// Run configuration covering the model / train / data / rollout sections.
/// Every key has a default; the parser rejects unknown keys and names the
/// offender so typos fail loudly instead of silently using a default.
struct CliConfig {
  int d_model = 192;
  int n_layers = 4;
  int n_heads = 4;
  int d_ff = 768;
  TrainConfig train;
  DataConfig data;
  RolloutConfig rollout;

  void validate() const;

  /// Model shaped for a grid of the given extents. Both must be multiples of
  /// the patch size; context length comes from train.tau_max.
  ModelConfig model_config(int grid_px, int grid_py) const;

  std::string to_json() const;
  static CliConfig from_json(const std::string& text);
};

CliConfig load_cli_config(const std::string& path);
void save_cli_config(const std::string& path, const CliConfig& cfg);

}  // namespace flowcast
