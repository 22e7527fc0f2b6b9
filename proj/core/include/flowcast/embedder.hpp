#pragma once

#include <span>
#include <vector>

#include "flowcast/field.hpp"
#include "flowcast/kernels.hpp"
#include "flowcast/patch.hpp"
#include "flowcast/rng.hpp"

namespace flowcast {

struct EmbedConfig {
  int d_model = 192;
  int max_px = 160;    // widest grid the x-table supports
  int max_py = 160;
  int tau_max = 5;
  int channels = 3;
  PatchOrder order = PatchOrder::x_major;

  void validate() const;
  int patch_dim() const { return kPatch * kPatch * channels; }
  int d_third() const { return d_model / 3; }
};

/// Per-token patch-grid position and 1-based timestep within the window.
struct TokenCoord {
  int x = 0, y = 0, t = 1;
};

struct SequenceActs {
  Tensor flat_patches;             // (tau*N, 16*16*C) encoder input rows
  nn::Mlp2Acts enc;
  std::vector<TokenCoord> coords;  // per output token, length (tau+1)*N
  int tau = 0;
  int n_patches = 0;
};

/// Patch encoder + learned position/timestep tables + sequence assembly
/// with the duplicated first-state prefix.
struct Embedder {
  EmbedConfig cfg;
  nn::Mlp2 encoder;  // patch_dim -> 512 -> d_model
  nn::Param x_table, y_table, t_table;  // t-table row 0 unused (t is 1-based)

  explicit Embedder(const EmbedConfig& config);
  void init(Rng& rng);

  /// Lookup [x_table[x] || y_table[y] || t_table[t]] into out (d_model).
  void st_embedding(const TokenCoord& c, Real* out) const;

  /// states s_1..s_tau -> tokens ((tau+1)*N, d_model). Token for patch p of
  /// state t is its encoded patch plus its spatiotemporal embedding; the
  /// first state's block is duplicated at the front.
  Tensor build_sequence(std::span<const FlowState> window, SequenceActs& acts) const;

  /// Accumulates encoder and table gradients from d_tokens ((tau+1)*N, d).
  void backward(const Tensor& d_tokens, const SequenceActs& acts);

  /// Tokens for a single state at window timestep t (1-based), no prefix.
  /// Inference-path helper for incremental decoding.
  Tensor embed_block(const FlowState& state, int t) const;

  std::vector<nn::Param*> params();
};

}  // namespace flowcast
