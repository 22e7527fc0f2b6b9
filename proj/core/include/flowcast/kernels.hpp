#pragma once

#include <string>
#include <vector>

#include "flowcast/tensor.hpp"

namespace flowcast::nn {

/// One trainable tensor with its gradient and Adam moment buffers.
/// Gradients accumulate across backward calls; zero_grad between steps.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m, v;  // optimizer moments, sized on first optimizer step

  Param() = default;
  Param(std::string n, std::vector<int> shape)
      : name(std::move(n)), value(shape), grad(std::move(shape)) {}

  void zero_grad() { grad.zero(); }
};

// Kernel convention: y/dx buffers are overwritten, parameter gradients
// (dw, db, ...) accumulate. All matrices are row-major. Shapes:
//   x (n, d_in), w (d_out, d_in), b (d_out), y (n, d_out).

void linear_forward(const Real* x, const Real* w, const Real* b, Real* y, int n, int d_in,
                    int d_out);
void linear_backward(const Real* x, const Real* w, const Real* dy, Real* dx, Real* dw,
                     Real* db, int n, int d_in, int d_out);

inline constexpr Real kLeakySlope = Real(0.01);

void leaky_relu_forward(const Real* x, Real* y, int64_t n, Real slope = kLeakySlope);
void leaky_relu_backward(const Real* x, const Real* dy, Real* dx, int64_t n,
                         Real slope = kLeakySlope);

/// Exact GELU, 0.5 x (1 + erf(x / sqrt(2))).
void gelu_forward(const Real* x, Real* y, int64_t n);
void gelu_backward(const Real* x, const Real* dy, Real* dx, int64_t n);

inline constexpr Real kLayerNormEps = Real(1e-5);

/// Row-wise layer norm over d; saves per-row mean and reciprocal std.
void layer_norm_forward(const Real* x, const Real* gamma, const Real* beta, Real* y,
                        Real* mean, Real* rstd, int n, int d);
void layer_norm_backward(const Real* x, const Real* gamma, const Real* mean,
                         const Real* rstd, const Real* dy, Real* dx, Real* dgamma,
                         Real* dbeta, int n, int d);

/// In-place row softmax over the first `valid` entries of each row; the rest
/// are set to 0. Max-subtracted for stability.
void softmax_row(Real* row, int valid, int width);

/// Two-layer MLP: linear(d_in -> hidden), LeakyReLU(0.01), linear(hidden ->
/// d_out). Saved activations for backward.
struct Mlp2Acts {
  Tensor h_pre;   // (n, hidden)
  Tensor h_post;  // (n, hidden)
};

struct Mlp2 {
  Param w1, b1, w2, b2;

  Mlp2() = default;
  Mlp2(const std::string& prefix, int d_in, int hidden, int d_out);

  int d_in() const { return w1.value.dim(1); }
  int hidden() const { return w1.value.dim(0); }
  int d_out() const { return w2.value.dim(0); }

  void forward(const Real* x, Real* y, int n, Mlp2Acts& acts) const;
  /// dx may be null when the input gradient is not needed.
  void backward(const Real* x, const Real* dy, Real* dx, int n, const Mlp2Acts& acts);
  std::vector<Param*> params();
};

/// Fused causal multi-head self-attention with output projection.
/// Weights are (d, d) row-major, biases (d).
struct AttnWeights {
  const Real *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
};
struct AttnGrads {
  Real *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
};

struct AttnActs {
  Tensor q, k, v;   // (L, d) post-projection
  Tensor probs;     // (heads, L, L), zero above the diagonal
  Tensor att;       // (L, d) concatenated head outputs, pre output-projection
};

void mha_forward(const Real* x, int L, int d, int heads, const AttnWeights& w,
                 AttnActs& acts, Real* y);
void mha_backward(const Real* x, const Real* dy, int L, int d, int heads,
                  const AttnWeights& w, const AttnActs& acts, const AttnGrads& g, Real* dx);

/// Append-only K/V cache for incremental decoding (inference only).
struct KvCache {
  Tensor k, v;  // (max_len, d)
  int len = 0;

  void reset(int max_len, int d) {
    k = Tensor({max_len, d});
    v = Tensor({max_len, d});
    len = 0;
  }
};

/// Runs attention for L_new appended tokens against cache contents plus
/// themselves; extends the cache. Output y (L_new, d).
void mha_forward_cached(const Real* x_new, int L_new, int d, int heads,
                        const AttnWeights& w, KvCache& cache, Real* y);

/// Token-level causal mask: entry (i, j) is 1 iff j <= i. Row-major L x L.
std::vector<uint8_t> causal_mask(int L);

}  // namespace flowcast::nn
