#pragma once

#include <array>
#include <vector>

#include "flowcast/field.hpp"
#include "flowcast/kernels.hpp"
#include "flowcast/patch.hpp"
#include "flowcast/rng.hpp"

namespace flowcast {

inline constexpr int kGnnDim = 32;
inline constexpr int kGnnHidden = 48;
inline constexpr int kGnnNeighbors = 5;  // self, -x, +x, -y, +y
inline constexpr Real kGatAttSlope = Real(0.2);

/// Single-head grid GAT layer. Scores follow the two-linear-map form:
/// e_ij = att . LeakyReLU(W_l h_i + W_r h_j), attention softmax over the
/// cell itself and its 4-neighbors, output sum alpha_ij (W_v h_j) + bias.
struct GatLayer {
  nn::Param w_l, w_r, w_v, att, bias;

  GatLayer() = default;
  GatLayer(const std::string& prefix, int d_in, int d_out);
  int d_in() const { return w_l.value.dim(1); }
  int d_out() const { return w_l.value.dim(0); }
  std::vector<nn::Param*> params();
};

struct GatActs {
  Tensor feat_l, feat_r, feat_v;  // (n, d_out) node transforms
  Tensor alpha;                   // (n, 5) attention, 0 where no neighbor
};

/// x: (H*W, d_in) row-major over cells, height rows of width columns.
void gat_forward(const GatLayer& layer, const Real* x, Real* y, int width, int height,
                 GatActs& acts);
void gat_backward(GatLayer& layer, const Real* x, const Real* dy, Real* dx, int width,
                  int height, const GatActs& acts);

struct DecodeActs {
  nn::Mlp2Acts proj;
  Tensor proj_out;              // (N, 16*16*32)
  Tensor grid_in;               // (H*W, 32) assembled features
  std::array<GatActs, 3> gat;
  std::array<Tensor, 3> gat_out;   // per-layer outputs, pre inter-layer ReLU
  std::array<Tensor, 2> act_post;  // post-LeakyReLU inputs to layers 2 and 3
};

/// Token projection MLP plus three GAT layers (32 -> 48 -> 48 -> 3) and the
/// residual next-state sum.
struct Decoder {
  int d_model = 0;
  PatchOrder order = PatchOrder::x_major;
  nn::Mlp2 proj;  // d_model -> 512 -> 16*16*32
  std::array<GatLayer, 3> gat;

  Decoder(int d_model_, PatchOrder order_);
  void init(Rng& rng);

  /// block: (N, d_model) backbone outputs for one predicted state.
  /// Returns s_t + decoded delta; boundary re-pinned when mask is given.
  FlowState decode(const Tensor& block, const FlowState& s_t, DecodeActs& acts,
                   const BoundaryMask* mask = nullptr) const;

  /// d_pred: gradient w.r.t. the decoded state (H, W, 3 flattened like
  /// FlowState.values). Returns gradient w.r.t. the token block.
  Tensor backward(const Tensor& d_pred, const Tensor& block, int width, int height,
                  const DecodeActs& acts);

  std::vector<nn::Param*> params();
};

}  // namespace flowcast
