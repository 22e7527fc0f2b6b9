#include "flowcast/embedder.hpp"

#include <cmath>
#include <cstring>
#include <string>

namespace flowcast {

void EmbedConfig::validate() const {
  if (d_model <= 0 || tau_max <= 0 || channels <= 0)
    throw ValidationError("embed config: dimensions must be positive");
  if (d_model % 3 != 0)
    throw ValidationError("embed config: d_model must be divisible by 3, got " +
                          std::to_string(d_model));
  if (max_px % kPatch != 0 || max_py % kPatch != 0)
    throw ValidationError("embed config: max grid extents must be divisible by 16");
}

Embedder::Embedder(const EmbedConfig& config)
    : cfg(config),
      encoder("embed/encoder", config.patch_dim(), 512, config.d_model),
      x_table("embed/x_table", {config.max_px / kPatch, config.d_third()}),
      y_table("embed/y_table", {config.max_py / kPatch, config.d_third()}),
      t_table("embed/t_table", {config.tau_max + 1, config.d_third()}) {
  cfg.validate();
}

void Embedder::init(Rng& rng) {
  auto uniform_fan_in = [&](Tensor& t, int fan_in) {
    const double bound = std::sqrt(6.0 / fan_in);
    for (int64_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<Real>(rng.uniform(-bound, bound));
  };
  uniform_fan_in(encoder.w1.value, cfg.patch_dim());
  uniform_fan_in(encoder.w2.value, 512);
  encoder.b1.value.zero();
  encoder.b2.value.zero();
  for (nn::Param* table : {&x_table, &y_table, &t_table})
    for (int64_t i = 0; i < table->value.size(); ++i)
      table->value[i] = static_cast<Real>(0.02 * rng.normal());
}

void Embedder::st_embedding(const TokenCoord& c, Real* out) const {
  const int w = cfg.d_third();
  if (c.x < 0 || c.x >= x_table.value.dim(0) || c.y < 0 || c.y >= y_table.value.dim(0))
    throw ValidationError("spatiotemporal embedding: patch index out of table range");
  if (c.t < 1 || c.t > cfg.tau_max)
    throw ValidationError("spatiotemporal embedding: context overflow (t = " +
                          std::to_string(c.t) + ", tau_max = " +
                          std::to_string(cfg.tau_max) + ")");
  std::memcpy(out, &x_table.value(c.x, 0), w * sizeof(Real));
  std::memcpy(out + w, &y_table.value(c.y, 0), w * sizeof(Real));
  std::memcpy(out + 2 * w, &t_table.value(c.t, 0), w * sizeof(Real));
}

Tensor Embedder::build_sequence(std::span<const FlowState> window,
                                SequenceActs& acts) const {
  const int tau = static_cast<int>(window.size());
  if (tau < 1) throw ValidationError("build_sequence: empty window");
  if (tau > cfg.tau_max)
    throw ValidationError("build_sequence: window length " + std::to_string(tau) +
                          " exceeds tau_max " + std::to_string(cfg.tau_max));
  const FlowState& first = window[0];
  if (first.channels != cfg.channels)
    throw ValidationError("build_sequence: channel count mismatch");
  const int n = patch_count(first.width, first.height);
  const auto pcoords = patch_coords(first.width, first.height, cfg.order);
  const int pd = cfg.patch_dim();

  acts.tau = tau;
  acts.n_patches = n;
  acts.flat_patches = Tensor({tau * n, pd});
  for (int t = 0; t < tau; ++t) {
    if (!window[t].shape_equals(first))
      throw ValidationError("build_sequence: states differ in shape");
    Tensor patches = patchify(window[t], cfg.order);
    std::memcpy(acts.flat_patches.data() + static_cast<size_t>(t) * n * pd,
                patches.data(), static_cast<size_t>(n) * pd * sizeof(Real));
  }

  Tensor encoded({tau * n, cfg.d_model});
  encoder.forward(acts.flat_patches.data(), encoded.data(), tau * n, acts.enc);

  // Sequence: block of state 1 twice, then states 2..tau.
  const int L = (tau + 1) * n;
  Tensor tokens({L, cfg.d_model});
  acts.coords.assign(static_cast<size_t>(L), TokenCoord{});
  std::vector<Real> st(static_cast<size_t>(cfg.d_model));
  for (int row = 0; row < L; ++row) {
    const int t = row < n ? 0 : (row - n) / n;      // source state index, 0-based
    const int p = row < n ? row : (row - n) % n;
    TokenCoord c{pcoords[p].first, pcoords[p].second, t + 1};
    acts.coords[row] = c;
    st_embedding(c, st.data());
    const Real* e = encoded.data() + (static_cast<size_t>(t) * n + p) * cfg.d_model;
    Real* out = tokens.data() + static_cast<size_t>(row) * cfg.d_model;
    for (int j = 0; j < cfg.d_model; ++j) out[j] = e[j] + st[j];
  }
  return tokens;
}

Tensor Embedder::embed_block(const FlowState& state, int t) const {
  const int n = patch_count(state.width, state.height);
  const auto pcoords = patch_coords(state.width, state.height, cfg.order);
  Tensor patches = patchify(state, cfg.order);
  Tensor flat = patches.reshaped({n, cfg.patch_dim()});
  Tensor tokens({n, cfg.d_model});
  nn::Mlp2Acts enc;
  encoder.forward(flat.data(), tokens.data(), n, enc);
  std::vector<Real> st(static_cast<size_t>(cfg.d_model));
  for (int p = 0; p < n; ++p) {
    st_embedding({pcoords[p].first, pcoords[p].second, t}, st.data());
    Real* out = tokens.data() + static_cast<size_t>(p) * cfg.d_model;
    for (int j = 0; j < cfg.d_model; ++j) out[j] += st[j];
  }
  return tokens;
}

void Embedder::backward(const Tensor& d_tokens, const SequenceActs& acts) {
  const int n = acts.n_patches, tau = acts.tau, d = cfg.d_model, w = cfg.d_third();
  if (d_tokens.dim(0) != (tau + 1) * n || d_tokens.dim(1) != d)
    throw ValidationError("embedder backward: gradient shape mismatch");

  Tensor d_encoded({tau * n, d});
  for (int row = 0; row < d_tokens.dim(0); ++row) {
    const int t = row < n ? 0 : (row - n) / n;
    const int p = row < n ? row : (row - n) % n;
    const Real* g = d_tokens.data() + static_cast<size_t>(row) * d;
    Real* de = d_encoded.data() + (static_cast<size_t>(t) * n + p) * d;
    for (int j = 0; j < d; ++j) de[j] += g[j];  // prefix row folds into block 1
    const TokenCoord& c = acts.coords[row];
    Real* gx = &x_table.grad(c.x, 0);
    Real* gy = &y_table.grad(c.y, 0);
    Real* gt = &t_table.grad(c.t, 0);
    for (int j = 0; j < w; ++j) {
      gx[j] += g[j];
      gy[j] += g[w + j];
      gt[j] += g[2 * w + j];
    }
  }
  encoder.backward(acts.flat_patches.data(), d_encoded.data(), nullptr, tau * n, acts.enc);
}

std::vector<nn::Param*> Embedder::params() {
  std::vector<nn::Param*> p = encoder.params();
  p.push_back(&x_table);
  p.push_back(&y_table);
  p.push_back(&t_table);
  return p;
}

}  // namespace flowcast
