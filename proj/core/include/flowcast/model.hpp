#pragma once

#include <span>
#include <string>
#include <vector>

#include "flowcast/backbone.hpp"
#include "flowcast/decoder.hpp"
#include "flowcast/embedder.hpp"

namespace flowcast {

struct ModelConfig {
  int d_model = 192;
  int n_layers = 4;
  int n_heads = 4;
  int d_ff = 768;
  int tau_max = 5;
  int grid_px = 96;
  int grid_py = 96;
  int channels = 3;
  PatchOrder order = PatchOrder::x_major;

  void validate() const;
  int n_patches() const { return (grid_px / kPatch) * (grid_py / kPatch); }
  int max_seq_len() const { return (tau_max + 1) * n_patches(); }
  EmbedConfig embed_config() const;
  BackboneConfig backbone_config() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

/// Saved activations for one teacher-forced window pass.
struct WindowActs {
  SequenceActs seq;
  BackboneActs bb;
  std::vector<Tensor> blocks;        // tau blocks of (N, d_model)
  std::vector<DecodeActs> dec;
  int tau = 0;
};

/// Patch embedder -> causal backbone -> grid decoder, end to end.
struct Model {
  ModelConfig cfg;
  Embedder embed;
  Backbone backbone;
  Decoder decoder;

  explicit Model(const ModelConfig& config);
  void init(uint64_t seed);

  /// states = s_1..s_{tau+1} (context plus targets, shared storage).
  /// Returns predictions for s_2..s_{tau+1}, each decoded from the
  /// ground-truth previous state (teacher forcing).
  std::vector<FlowState> forward_window(std::span<const FlowState> states,
                                        WindowActs& acts) const;

  /// d_preds: per-prediction gradients, each (H*W*3) values in state layout.
  void backward_window(const std::vector<Tensor>& d_preds,
                       std::span<const FlowState> states, const WindowActs& acts);

  /// Single next-state prediction from a context window (inference path).
  FlowState predict_next(std::span<const FlowState> window) const;

  std::vector<nn::Param*> params();
  void zero_grads();
  int64_t param_count();
};

}  // namespace flowcast
