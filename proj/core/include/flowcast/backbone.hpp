#pragma once

#include <vector>

#include "flowcast/kernels.hpp"
#include "flowcast/rng.hpp"

namespace flowcast {

struct BackboneConfig {
  int d_model = 192;
  int n_layers = 4;
  int n_heads = 4;
  int d_ff = 768;
  int max_seq_len = 256;

  void validate() const;
};

struct LayerParams {
  nn::Param ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
  nn::Param ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;

  LayerParams() = default;
  LayerParams(const std::string& prefix, int d, int d_ff);
  std::vector<nn::Param*> params();
};

struct LayerActs {
  Tensor x_in;                      // layer input (L, d)
  Tensor ln1_out, ln1_mean, ln1_rstd;
  nn::AttnActs attn;
  Tensor x_mid;                     // after attention residual
  Tensor ln2_out, ln2_mean, ln2_rstd;
  Tensor ff_pre;                    // (L, d_ff) pre-GELU
  Tensor ff_post;
};

struct BackboneActs {
  std::vector<LayerActs> layers;
  Tensor final_in;                  // input to the final layer norm
  Tensor final_mean, final_rstd;
  int L = 0;
};

/// Per-layer K/V caches for incremental decoding.
struct BackboneCache {
  std::vector<nn::KvCache> layers;
  int len = 0;

  void reset(const BackboneConfig& cfg);
};

/// Pre-norm causal transformer: per layer LN -> attention -> add,
/// LN -> GELU feed-forward -> add; final LN at the top.
struct Backbone {
  BackboneConfig cfg;
  std::vector<LayerParams> layers;
  nn::Param lnf_g, lnf_b;

  explicit Backbone(const BackboneConfig& config);
  void init(Rng& rng);

  Tensor forward(const Tensor& tokens, BackboneActs& acts) const;
  /// Returns gradient w.r.t. the input tokens; parameter grads accumulate.
  Tensor backward(const Tensor& d_out, const BackboneActs& acts);

  /// Appends new tokens to the cached sequence; returns outputs for the new
  /// positions only. Matches forward on the concatenation within 1e-5.
  Tensor forward_incremental(const Tensor& new_tokens, BackboneCache& cache) const;

  std::vector<nn::Param*> params();
};

/// Drop the first N rows and split the rest into tau blocks of N rows.
std::vector<Tensor> split_outputs(const Tensor& e_out, int tau, int n);

}  // namespace flowcast
