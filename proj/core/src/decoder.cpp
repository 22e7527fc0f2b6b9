#include "flowcast/decoder.hpp"

#include <cmath>
#include <cstring>

namespace flowcast {

namespace {

// Fixed neighbor enumeration: self, -x, +x, -y, +y. Returns count, fills
// cell indices.
int neighbors(int cx, int cy, int width, int height, int* idx) {
  int k = 0;
  idx[k++] = cy * width + cx;
  if (cx > 0) idx[k++] = cy * width + (cx - 1);
  if (cx < width - 1) idx[k++] = cy * width + (cx + 1);
  if (cy > 0) idx[k++] = (cy - 1) * width + cx;
  if (cy < height - 1) idx[k++] = (cy + 1) * width + cx;
  return k;
}

}  // namespace

GatLayer::GatLayer(const std::string& prefix, int d_in, int d_out)
    : w_l(prefix + "/w_l", {d_out, d_in}),
      w_r(prefix + "/w_r", {d_out, d_in}),
      w_v(prefix + "/w_v", {d_out, d_in}),
      att(prefix + "/att", {d_out}),
      bias(prefix + "/bias", {d_out}) {}

std::vector<nn::Param*> GatLayer::params() { return {&w_l, &w_r, &w_v, &att, &bias}; }

void gat_forward(const GatLayer& layer, const Real* x, Real* y, int width, int height,
                 GatActs& acts) {
  const int n = width * height;
  const int di = layer.d_in(), dn = layer.d_out();
  acts.feat_l = Tensor({n, dn});
  acts.feat_r = Tensor({n, dn});
  acts.feat_v = Tensor({n, dn});
  acts.alpha = Tensor({n, kGnnNeighbors});
  nn::linear_forward(x, layer.w_l.value.data(), nullptr, acts.feat_l.data(), n, di, dn);
  nn::linear_forward(x, layer.w_r.value.data(), nullptr, acts.feat_r.data(), n, di, dn);
  nn::linear_forward(x, layer.w_v.value.data(), nullptr, acts.feat_v.data(), n, di, dn);
  const Real* a = layer.att.value.data();
  const Real* b = layer.bias.value.data();
  int idx[kGnnNeighbors];
  double e[kGnnNeighbors];
  for (int cy = 0; cy < height; ++cy)
    for (int cx = 0; cx < width; ++cx) {
      const int i = cy * width + cx;
      const int deg = neighbors(cx, cy, width, height, idx);
      const Real* fl = acts.feat_l.data() + static_cast<size_t>(i) * dn;
      double mx = -1e300;
      for (int k = 0; k < deg; ++k) {
        const Real* fr = acts.feat_r.data() + static_cast<size_t>(idx[k]) * dn;
        double s = 0;
        for (int c = 0; c < dn; ++c) {
          const Real z = fl[c] + fr[c];
          s += static_cast<double>(a[c]) * (z > Real(0) ? z : kGatAttSlope * z);
        }
        e[k] = s;
        mx = std::max(mx, s);
      }
      double sum = 0;
      for (int k = 0; k < deg; ++k) {
        e[k] = std::exp(e[k] - mx);
        sum += e[k];
      }
      Real* alpha = acts.alpha.data() + static_cast<size_t>(i) * kGnnNeighbors;
      Real* yi = y + static_cast<size_t>(i) * dn;
      for (int c = 0; c < dn; ++c) yi[c] = b[c];
      for (int k = 0; k < deg; ++k) {
        const Real al = static_cast<Real>(e[k] / sum);
        alpha[k] = al;
        const Real* fv = acts.feat_v.data() + static_cast<size_t>(idx[k]) * dn;
        for (int c = 0; c < dn; ++c) yi[c] += al * fv[c];
      }
      for (int k = deg; k < kGnnNeighbors; ++k) alpha[k] = Real(0);
    }
}

void gat_backward(GatLayer& layer, const Real* x, const Real* dy, Real* dx, int width,
                  int height, const GatActs& acts) {
  const int n = width * height;
  const int di = layer.d_in(), dn = layer.d_out();
  Tensor dfl({n, dn}), dfr({n, dn}), dfv({n, dn});
  const Real* a = layer.att.value.data();
  Real* da = layer.att.grad.data();
  Real* db = layer.bias.grad.data();
  int idx[kGnnNeighbors];
  double dalpha[kGnnNeighbors];
  for (int cy = 0; cy < height; ++cy)
    for (int cx = 0; cx < width; ++cx) {
      const int i = cy * width + cx;
      const int deg = neighbors(cx, cy, width, height, idx);
      const Real* dyi = dy + static_cast<size_t>(i) * dn;
      const Real* alpha = acts.alpha.data() + static_cast<size_t>(i) * kGnnNeighbors;
      for (int c = 0; c < dn; ++c) db[c] += dyi[c];
      double dot = 0;
      for (int k = 0; k < deg; ++k) {
        const Real* fv = acts.feat_v.data() + static_cast<size_t>(idx[k]) * dn;
        Real* dv = dfv.data() + static_cast<size_t>(idx[k]) * dn;
        double g = 0;
        for (int c = 0; c < dn; ++c) {
          g += static_cast<double>(dyi[c]) * fv[c];
          dv[c] += alpha[k] * dyi[c];
        }
        dalpha[k] = g;
        dot += static_cast<double>(alpha[k]) * g;
      }
      const Real* fl = acts.feat_l.data() + static_cast<size_t>(i) * dn;
      Real* dl = dfl.data() + static_cast<size_t>(i) * dn;
      for (int k = 0; k < deg; ++k) {
        const double de = static_cast<double>(alpha[k]) * (dalpha[k] - dot);
        const Real* fr = acts.feat_r.data() + static_cast<size_t>(idx[k]) * dn;
        Real* dr = dfr.data() + static_cast<size_t>(idx[k]) * dn;
        for (int c = 0; c < dn; ++c) {
          const Real z = fl[c] + fr[c];
          const Real s = z > Real(0) ? z : kGatAttSlope * z;
          da[c] += static_cast<Real>(de) * s;
          const Real dz = static_cast<Real>(de) * a[c] *
                          (z > Real(0) ? Real(1) : kGatAttSlope);
          dl[c] += dz;
          dr[c] += dz;
        }
      }
    }
  Tensor scratch({n, di});
  nn::linear_backward(x, layer.w_l.value.data(), dfl.data(), dx, layer.w_l.grad.data(),
                      nullptr, n, di, dn);
  nn::linear_backward(x, layer.w_r.value.data(), dfr.data(), scratch.data(),
                      layer.w_r.grad.data(), nullptr, n, di, dn);
  for (int64_t i = 0; i < scratch.size(); ++i) dx[i] += scratch[i];
  nn::linear_backward(x, layer.w_v.value.data(), dfv.data(), scratch.data(),
                      layer.w_v.grad.data(), nullptr, n, di, dn);
  for (int64_t i = 0; i < scratch.size(); ++i) dx[i] += scratch[i];
}

Decoder::Decoder(int d_model_, PatchOrder order_)
    : d_model(d_model_), order(order_),
      proj("decoder/proj", d_model_, 512, kPatch * kPatch * kGnnDim),
      gat{GatLayer("decoder/gat0", kGnnDim, kGnnHidden),
          GatLayer("decoder/gat1", kGnnHidden, kGnnHidden),
          GatLayer("decoder/gat2", kGnnHidden, 3)} {}

void Decoder::init(Rng& rng) {
  auto uniform_fan_in = [&](Tensor& t, int fan_in) {
    const double bound = std::sqrt(6.0 / fan_in);
    for (int64_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<Real>(rng.uniform(-bound, bound));
  };
  uniform_fan_in(proj.w1.value, d_model);
  uniform_fan_in(proj.w2.value, 512);
  for (GatLayer& g : gat) {
    uniform_fan_in(g.w_l.value, g.d_in());
    uniform_fan_in(g.w_r.value, g.d_in());
    uniform_fan_in(g.w_v.value, g.d_in());
    for (int64_t i = 0; i < g.att.value.size(); ++i)
      g.att.value[i] = static_cast<Real>(0.02 * rng.normal());
  }
}

FlowState Decoder::decode(const Tensor& block, const FlowState& s_t, DecodeActs& acts,
                          const BoundaryMask* mask) const {
  if (block.rank() != 2 || block.dim(1) != d_model)
    throw ValidationError("decode: block width mismatch");
  const int w = s_t.width, h = s_t.height;
  if (s_t.channels != 3) throw ValidationError("decode: expected 3-channel state");
  if (block.dim(0) != patch_count(w, h))
    throw ValidationError("decode: token count does not tile the grid");
  const int n_tok = block.dim(0);

  acts.proj_out = Tensor({n_tok, kPatch * kPatch * kGnnDim});
  proj.forward(block.data(), acts.proj_out.data(), n_tok, acts.proj);
  Tensor grid = assemble_grid(acts.proj_out.reshaped({n_tok, kPatch, kPatch, kGnnDim}), w,
                              h, order);
  acts.grid_in = grid.reshaped({w * h, kGnnDim});

  Tensor h1({w * h, kGnnHidden});
  gat_forward(gat[0], acts.grid_in.data(), h1.data(), w, h, acts.gat[0]);
  acts.gat_out[0] = h1;
  acts.act_post[0] = Tensor({w * h, kGnnHidden});
  nn::leaky_relu_forward(h1.data(), acts.act_post[0].data(), h1.size());

  Tensor h2({w * h, kGnnHidden});
  gat_forward(gat[1], acts.act_post[0].data(), h2.data(), w, h, acts.gat[1]);
  acts.gat_out[1] = h2;
  acts.act_post[1] = Tensor({w * h, kGnnHidden});
  nn::leaky_relu_forward(h2.data(), acts.act_post[1].data(), h2.size());

  Tensor delta({w * h, 3});
  gat_forward(gat[2], acts.act_post[1].data(), delta.data(), w, h, acts.gat[2]);
  acts.gat_out[2] = delta;

  FlowState next = s_t;
  for (size_t i = 0; i < next.values.size(); ++i) next.values[i] += delta[i];
  if (mask) apply_boundary_in_place(next, *mask);
  return next;
}

Tensor Decoder::backward(const Tensor& d_pred, const Tensor& block, int width, int height,
                         const DecodeActs& acts) {
  const int n = width * height;
  Tensor d2({n, kGnnHidden});
  gat_backward(gat[2], acts.act_post[1].data(), d_pred.data(), d2.data(), width, height,
               acts.gat[2]);
  nn::leaky_relu_backward(acts.gat_out[1].data(), d2.data(), d2.data(), d2.size());
  Tensor d1({n, kGnnHidden});
  gat_backward(gat[1], acts.act_post[0].data(), d2.data(), d1.data(), width, height,
               acts.gat[1]);
  nn::leaky_relu_backward(acts.gat_out[0].data(), d1.data(), d1.data(), d1.size());
  Tensor d0({n, kGnnDim});
  gat_backward(gat[0], acts.grid_in.data(), d1.data(), d0.data(), width, height,
               acts.gat[0]);
  // Adjoint of grid assembly is the patch split itself (pure permutation).
  Tensor d_patches = patchify_grid(d0.reshaped({height, width, kGnnDim}), order);
  const int n_tok = block.dim(0);
  Tensor d_proj = d_patches.reshaped({n_tok, kPatch * kPatch * kGnnDim});
  Tensor d_block({n_tok, d_model});
  proj.backward(block.data(), d_proj.data(), d_block.data(), n_tok, acts.proj);
  return d_block;
}

std::vector<nn::Param*> Decoder::params() {
  std::vector<nn::Param*> out = proj.params();
  for (GatLayer& g : gat)
    for (nn::Param* p : g.params()) out.push_back(p);
  return out;
}

}  // namespace flowcast
