#include "flowcast/backbone.hpp"

#include <cstring>
#include <string>

namespace flowcast {

void BackboneConfig::validate() const {
  if (d_model <= 0 || n_heads <= 0 || d_ff <= 0 || max_seq_len <= 0)
    throw ValidationError("backbone config: dimensions must be positive");
  if (n_layers < 0) throw ValidationError("backbone config: negative layer count");
  if (d_model % n_heads != 0)
    throw ValidationError("backbone config: d_model " + std::to_string(d_model) +
                          " not divisible by n_heads " + std::to_string(n_heads));
  if (d_model % 3 != 0)
    throw ValidationError("backbone config: d_model must be divisible by 3");
}

LayerParams::LayerParams(const std::string& prefix, int d, int d_ff)
    : ln1_g(prefix + "/ln1_g", {d}),
      ln1_b(prefix + "/ln1_b", {d}),
      wq(prefix + "/wq", {d, d}),
      bq(prefix + "/bq", {d}),
      wk(prefix + "/wk", {d, d}),
      bk(prefix + "/bk", {d}),
      wv(prefix + "/wv", {d, d}),
      bv(prefix + "/bv", {d}),
      wo(prefix + "/wo", {d, d}),
      bo(prefix + "/bo", {d}),
      ln2_g(prefix + "/ln2_g", {d}),
      ln2_b(prefix + "/ln2_b", {d}),
      fc1_w(prefix + "/fc1_w", {d_ff, d}),
      fc1_b(prefix + "/fc1_b", {d_ff}),
      fc2_w(prefix + "/fc2_w", {d, d_ff}),
      fc2_b(prefix + "/fc2_b", {d}) {}

std::vector<nn::Param*> LayerParams::params() {
  return {&ln1_g, &ln1_b, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo,
          &ln2_g, &ln2_b, &fc1_w, &fc1_b, &fc2_w, &fc2_b};
}

Backbone::Backbone(const BackboneConfig& config)
    : cfg(config), lnf_g("backbone/lnf_g", {config.d_model}),
      lnf_b("backbone/lnf_b", {config.d_model}) {
  cfg.validate();
  layers.reserve(static_cast<size_t>(cfg.n_layers));
  for (int l = 0; l < cfg.n_layers; ++l)
    layers.emplace_back("backbone/layer" + std::to_string(l), cfg.d_model, cfg.d_ff);
}

void Backbone::init(Rng& rng) {
  auto normal_fill = [&](Tensor& t) {
    for (int64_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<Real>(0.02 * rng.normal());
  };
  for (LayerParams& l : layers) {
    normal_fill(l.wq.value);
    normal_fill(l.wk.value);
    normal_fill(l.wv.value);
    normal_fill(l.wo.value);
    normal_fill(l.fc1_w.value);
    normal_fill(l.fc2_w.value);
    l.ln1_g.value.fill(Real(1));
    l.ln2_g.value.fill(Real(1));
  }
  lnf_g.value.fill(Real(1));
}

namespace {

nn::AttnWeights attn_weights(const LayerParams& l) {
  return {l.wq.value.data(), l.bq.value.data(), l.wk.value.data(), l.bk.value.data(),
          l.wv.value.data(), l.bv.value.data(), l.wo.value.data(), l.bo.value.data()};
}

nn::AttnGrads attn_grads(LayerParams& l) {
  return {l.wq.grad.data(), l.bq.grad.data(), l.wk.grad.data(), l.bk.grad.data(),
          l.wv.grad.data(), l.bv.grad.data(), l.wo.grad.data(), l.bo.grad.data()};
}

}  // namespace

Tensor Backbone::forward(const Tensor& tokens, BackboneActs& acts) const {
  if (tokens.rank() != 2 || tokens.dim(1) != cfg.d_model)
    throw ValidationError("backbone: token width mismatch");
  const int L = tokens.dim(0), d = cfg.d_model;
  if (L > cfg.max_seq_len)
    throw ValidationError("backbone: sequence length " + std::to_string(L) +
                          " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  acts.L = L;
  acts.layers.assign(layers.size(), LayerActs{});
  Tensor x = tokens;
  Tensor scratch({L, d});
  for (size_t li = 0; li < layers.size(); ++li) {
    const LayerParams& l = layers[li];
    LayerActs& a = acts.layers[li];
    a.x_in = x;
    a.ln1_out = Tensor({L, d});
    a.ln1_mean = Tensor({L});
    a.ln1_rstd = Tensor({L});
    nn::layer_norm_forward(x.data(), l.ln1_g.value.data(), l.ln1_b.value.data(),
                           a.ln1_out.data(), a.ln1_mean.data(), a.ln1_rstd.data(), L, d);
    nn::mha_forward(a.ln1_out.data(), L, d, cfg.n_heads, attn_weights(l), a.attn,
                    scratch.data());
    for (int64_t i = 0; i < x.size(); ++i) x[i] += scratch[i];
    a.x_mid = x;
    a.ln2_out = Tensor({L, d});
    a.ln2_mean = Tensor({L});
    a.ln2_rstd = Tensor({L});
    nn::layer_norm_forward(x.data(), l.ln2_g.value.data(), l.ln2_b.value.data(),
                           a.ln2_out.data(), a.ln2_mean.data(), a.ln2_rstd.data(), L, d);
    a.ff_pre = Tensor({L, cfg.d_ff});
    a.ff_post = Tensor({L, cfg.d_ff});
    nn::linear_forward(a.ln2_out.data(), l.fc1_w.value.data(), l.fc1_b.value.data(),
                       a.ff_pre.data(), L, d, cfg.d_ff);
    nn::gelu_forward(a.ff_pre.data(), a.ff_post.data(), a.ff_pre.size());
    nn::linear_forward(a.ff_post.data(), l.fc2_w.value.data(), l.fc2_b.value.data(),
                       scratch.data(), L, cfg.d_ff, d);
    for (int64_t i = 0; i < x.size(); ++i) x[i] += scratch[i];
  }
  acts.final_in = x;
  acts.final_mean = Tensor({L});
  acts.final_rstd = Tensor({L});
  Tensor out({L, d});
  nn::layer_norm_forward(x.data(), lnf_g.value.data(), lnf_b.value.data(), out.data(),
                         acts.final_mean.data(), acts.final_rstd.data(), L, d);
  return out;
}

Tensor Backbone::backward(const Tensor& d_out, const BackboneActs& acts) {
  const int L = acts.L, d = cfg.d_model;
  Tensor dx({L, d});
  nn::layer_norm_backward(acts.final_in.data(), lnf_g.value.data(), acts.final_mean.data(),
                          acts.final_rstd.data(), d_out.data(), dx.data(),
                          lnf_g.grad.data(), lnf_b.grad.data(), L, d);
  Tensor d_branch({L, d});
  Tensor d_ff_post({L, cfg.d_ff});
  for (int li = static_cast<int>(layers.size()) - 1; li >= 0; --li) {
    LayerParams& l = layers[static_cast<size_t>(li)];
    const LayerActs& a = acts.layers[static_cast<size_t>(li)];
    // x_out = x_mid + fc2(gelu(fc1(ln2(x_mid))))
    nn::linear_backward(a.ff_post.data(), l.fc2_w.value.data(), dx.data(),
                        d_ff_post.data(), l.fc2_w.grad.data(), l.fc2_b.grad.data(), L,
                        cfg.d_ff, d);
    nn::gelu_backward(a.ff_pre.data(), d_ff_post.data(), d_ff_post.data(),
                      d_ff_post.size());
    Tensor d_ln2({L, d});
    nn::linear_backward(a.ln2_out.data(), l.fc1_w.value.data(), d_ff_post.data(),
                        d_ln2.data(), l.fc1_w.grad.data(), l.fc1_b.grad.data(), L, d,
                        cfg.d_ff);
    nn::layer_norm_backward(a.x_mid.data(), l.ln2_g.value.data(), a.ln2_mean.data(),
                            a.ln2_rstd.data(), d_ln2.data(), d_branch.data(),
                            l.ln2_g.grad.data(), l.ln2_b.grad.data(), L, d);
    for (int64_t i = 0; i < dx.size(); ++i) dx[i] += d_branch[i];
    // x_mid = x_in + attn(ln1(x_in))
    Tensor d_ln1({L, d});
    nn::mha_backward(a.ln1_out.data(), dx.data(), L, d, cfg.n_heads, attn_weights(l),
                     a.attn, attn_grads(l), d_ln1.data());
    nn::layer_norm_backward(a.x_in.data(), l.ln1_g.value.data(), a.ln1_mean.data(),
                            a.ln1_rstd.data(), d_ln1.data(), d_branch.data(),
                            l.ln1_g.grad.data(), l.ln1_b.grad.data(), L, d);
    for (int64_t i = 0; i < dx.size(); ++i) dx[i] += d_branch[i];
  }
  return dx;
}

void BackboneCache::reset(const BackboneConfig& cfg) {
  layers.assign(static_cast<size_t>(cfg.n_layers), nn::KvCache{});
  for (nn::KvCache& c : layers) c.reset(cfg.max_seq_len, cfg.d_model);
  len = 0;
}

Tensor Backbone::forward_incremental(const Tensor& new_tokens, BackboneCache& cache) const {
  if (new_tokens.rank() != 2 || new_tokens.dim(1) != cfg.d_model)
    throw ValidationError("backbone: token width mismatch");
  if (cache.layers.size() != layers.size())
    throw ValidationError("backbone: cache layer count mismatch");
  const int L = new_tokens.dim(0), d = cfg.d_model;
  if (cache.len + L > cfg.max_seq_len)
    throw ValidationError("backbone: cached sequence exceeds max_seq_len");
  Tensor x = new_tokens;
  Tensor ln({L, d}), scratch({L, d}), mean({L}), rstd({L});
  for (size_t li = 0; li < layers.size(); ++li) {
    const LayerParams& l = layers[li];
    nn::layer_norm_forward(x.data(), l.ln1_g.value.data(), l.ln1_b.value.data(), ln.data(),
                           mean.data(), rstd.data(), L, d);
    nn::mha_forward_cached(ln.data(), L, d, cfg.n_heads, attn_weights(l),
                           cache.layers[li], scratch.data());
    for (int64_t i = 0; i < x.size(); ++i) x[i] += scratch[i];
    nn::layer_norm_forward(x.data(), l.ln2_g.value.data(), l.ln2_b.value.data(), ln.data(),
                           mean.data(), rstd.data(), L, d);
    Tensor ff({L, cfg.d_ff});
    nn::linear_forward(ln.data(), l.fc1_w.value.data(), l.fc1_b.value.data(), ff.data(), L,
                       d, cfg.d_ff);
    nn::gelu_forward(ff.data(), ff.data(), ff.size());
    nn::linear_forward(ff.data(), l.fc2_w.value.data(), l.fc2_b.value.data(),
                       scratch.data(), L, cfg.d_ff, d);
    for (int64_t i = 0; i < x.size(); ++i) x[i] += scratch[i];
  }
  cache.len += L;
  Tensor out({L, d});
  nn::layer_norm_forward(x.data(), lnf_g.value.data(), lnf_b.value.data(), out.data(),
                         mean.data(), rstd.data(), L, d);
  return out;
}

std::vector<nn::Param*> Backbone::params() {
  std::vector<nn::Param*> out;
  for (LayerParams& l : layers)
    for (nn::Param* p : l.params()) out.push_back(p);
  out.push_back(&lnf_g);
  out.push_back(&lnf_b);
  return out;
}

std::vector<Tensor> split_outputs(const Tensor& e_out, int tau, int n) {
  if (tau < 1 || n < 1) throw ValidationError("split_outputs: tau and N must be positive");
  if (e_out.rank() != 2 || e_out.dim(0) != (tau + 1) * n)
    throw ValidationError("split_outputs: expected " + std::to_string((tau + 1) * n) +
                          " rows, got " + std::to_string(e_out.dim(0)));
  const int d = e_out.dim(1);
  std::vector<Tensor> blocks;
  blocks.reserve(static_cast<size_t>(tau));
  for (int t = 1; t <= tau; ++t) {
    Tensor b({n, d});
    std::memcpy(b.data(), e_out.data() + static_cast<size_t>(t) * n * d,
                static_cast<size_t>(n) * d * sizeof(Real));
    blocks.push_back(std::move(b));
  }
  return blocks;
}

}  // namespace flowcast
