#include <cmath>
#include <vector>

#include "doctest.h"
#include "flowcast/backbone.hpp"
#include "helpers.hpp"

using namespace flowcast;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
  Mat m(size_t(t.dim(0)), std::vector<double>(size_t(t.dim(1))));
  for (int i = 0; i < t.dim(0); ++i)
    for (int j = 0; j < t.dim(1); ++j) m[size_t(i)][size_t(j)] = t(i, j);
  return m;
}

Mat ref_layer_norm(const Mat& x, const nn::Param& g, const nn::Param& b) {
  Mat y = x;
  const size_t d = x[0].size();
  for (auto& row : y) {
    double m = 0;
    for (double v : row) m += v;
    m /= double(d);
    double var = 0;
    for (double v : row) var += (v - m) * (v - m);
    var /= double(d);
    const double rstd = 1.0 / std::sqrt(var + double(nn::kLayerNormEps));
    for (size_t j = 0; j < d; ++j)
      row[j] = (row[j] - m) * rstd * double(g.value[int64_t(j)]) +
               double(b.value[int64_t(j)]);
  }
  return y;
}

Mat ref_linear(const Mat& x, const nn::Param& w, const nn::Param& b) {
  const int n = int(x.size()), d_in = int(x[0].size()), d_out = w.value.dim(0);
  Mat y(size_t(n), std::vector<double>(static_cast<size_t>(d_out)));
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < d_out; ++o) {
      double acc = b.value[o];
      for (int j = 0; j < d_in; ++j) acc += x[size_t(i)][size_t(j)] * double(w.value(o, j));
      y[size_t(i)][size_t(o)] = acc;
    }
  return y;
}

Mat ref_attention(const Mat& x, LayerParams& lp, int heads) {
  const int L = int(x.size()), d = int(x[0].size()), dh = d / heads;
  Mat q = ref_linear(x, lp.wq, lp.bq);
  Mat k = ref_linear(x, lp.wk, lp.bk);
  Mat v = ref_linear(x, lp.wv, lp.bv);
  Mat att(size_t(L), std::vector<double>(size_t(d), 0.0));
  for (int h = 0; h < heads; ++h)
    for (int i = 0; i < L; ++i) {
      std::vector<double> s(size_t(i) + 1);
      double mx = -1e300;
      for (int j = 0; j <= i; ++j) {
        double acc = 0;
        for (int e = 0; e < dh; ++e)
          acc += q[size_t(i)][size_t(h * dh + e)] * k[size_t(j)][size_t(h * dh + e)];
        s[size_t(j)] = acc / std::sqrt(double(dh));
        mx = std::max(mx, s[size_t(j)]);
      }
      double z = 0;
      for (double& e : s) {
        e = std::exp(e - mx);
        z += e;
      }
      for (int j = 0; j <= i; ++j)
        for (int e = 0; e < dh; ++e)
          att[size_t(i)][size_t(h * dh + e)] +=
              s[size_t(j)] / z * v[size_t(j)][size_t(h * dh + e)];
    }
  return ref_linear(att, lp.wo, lp.bo);
}

Mat ref_backbone(const Tensor& tokens, Backbone& bb) {
  Mat x = to_mat(tokens);
  for (LayerParams& lp : bb.layers) {
    Mat a = ref_attention(ref_layer_norm(x, lp.ln1_g, lp.ln1_b), lp, bb.cfg.n_heads);
    for (size_t i = 0; i < x.size(); ++i)
      for (size_t j = 0; j < x[0].size(); ++j) x[i][j] += a[i][j];
    Mat h = ref_linear(ref_layer_norm(x, lp.ln2_g, lp.ln2_b), lp.fc1_w, lp.fc1_b);
    for (auto& row : h)
      for (double& v : row) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    Mat f = ref_linear(h, lp.fc2_w, lp.fc2_b);
    for (size_t i = 0; i < x.size(); ++i)
      for (size_t j = 0; j < x[0].size(); ++j) x[i][j] += f[i][j];
  }
  return ref_layer_norm(x, bb.lnf_g, bb.lnf_b);
}

BackboneConfig tiny_cfg(int layers) {
  BackboneConfig cfg;
  cfg.d_model = 12;
  cfg.n_layers = layers;
  cfg.n_heads = 2;
  cfg.d_ff = 20;
  cfg.max_seq_len = 32;
  return cfg;
}

}  // namespace

TEST_CASE("zero layer backbone is the final layer norm") {
  Backbone bb(tiny_cfg(0));
  Rng rng(1);
  bb.init(rng);
  Tensor x({5, 12});
  testutil::fill_normal(x, rng, 1.5);
  BackboneActs acts;
  Tensor y = bb.forward(x, acts);
  Mat ref = ref_layer_norm(to_mat(x), bb.lnf_g, bb.lnf_b);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 12; ++j)
      CHECK(std::abs(double(y(i, j)) - ref[size_t(i)][size_t(j)]) < 1e-5);
}

TEST_CASE("backbone matches a double precision reference") {
  for (int layers : {1, 2}) {
    Backbone bb(tiny_cfg(layers));
    Rng rng(20 + uint64_t(layers));
    bb.init(rng);
    Tensor x({4, 12});
    testutil::fill_normal(x, rng, 1.0);
    BackboneActs acts;
    Tensor y = bb.forward(x, acts);
    Mat ref = ref_backbone(x, bb);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 12; ++j)
        CHECK(std::abs(double(y(i, j)) - ref[size_t(i)][size_t(j)]) < 1e-5);
  }
}

TEST_CASE("backbone is causal") {
  Backbone bb(tiny_cfg(2));
  Rng rng(3);
  bb.init(rng);
  // Strong weights so the perturbation mixes measurably into later rows.
  for (nn::Param* p : bb.params())
    if (p->name.find("ln") == std::string::npos)
      testutil::fill_normal(p->value, rng, 0.3);
  const int L = 8;
  Tensor x({L, 12});
  testutil::fill_normal(x, rng, 1.0);
  BackboneActs a1, a2;
  Tensor y1 = bb.forward(x, a1);
  Tensor xp = x;
  // Single-coordinate bump: a uniform row shift would be invisible to the
  // layer norms by design.
  xp(5, 3) += Real(1);
  Tensor y2 = bb.forward(xp, a2);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 12; ++j) CHECK(y1(i, j) == y2(i, j));
  for (int i = 5; i < L; ++i) {
    bool changed = false;
    for (int j = 0; j < 12; ++j) changed |= y1(i, j) != y2(i, j);
    CHECK(changed);
  }
}

TEST_CASE("incremental forward matches the full pass") {
  Backbone bb(tiny_cfg(2));
  Rng rng(4);
  bb.init(rng);
  const int L = 10;
  Tensor x({L, 12});
  testutil::fill_normal(x, rng, 1.0);
  BackboneActs acts;
  Tensor full = bb.forward(x, acts);

  BackboneCache cache;
  cache.reset(bb.cfg);
  Tensor inc({L, 12});
  int done = 0;
  for (int chunk : {4, 2, 4}) {
    Tensor part({chunk, 12});
    for (int i = 0; i < chunk; ++i)
      for (int j = 0; j < 12; ++j) part(i, j) = x(done + i, j);
    Tensor out = bb.forward_incremental(part, cache);
    REQUIRE(out.shape() == std::vector<int>{chunk, 12});
    for (int i = 0; i < chunk; ++i)
      for (int j = 0; j < 12; ++j) inc(done + i, j) = out(i, j);
    done += chunk;
  }
  CHECK(cache.len == L);
  for (int64_t i = 0; i < full.size(); ++i)
    CHECK(std::abs(double(inc[i]) - double(full[i])) < 1e-5);

  // Overflowing max_seq_len is an error.
  BackboneCache small;
  small.reset(bb.cfg);
  Tensor big({bb.cfg.max_seq_len + 1, 12});
  CHECK_THROWS_AS(bb.forward_incremental(big, small), ValidationError);
}

TEST_CASE("output splitting discards the prefix") {
  const int n = 4, tau = 2, d = 3;
  Tensor e({(tau + 1) * n, d});
  for (int i = 0; i < e.dim(0); ++i)
    for (int j = 0; j < d; ++j) e(i, j) = Real(i * 10 + j);
  auto blocks = split_outputs(e, tau, n);
  REQUIRE(blocks.size() == 2);
  for (int b = 0; b < tau; ++b) {
    REQUIRE(blocks[size_t(b)].shape() == std::vector<int>{n, d});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j)
        CHECK(blocks[size_t(b)](i, j) == Real((n + b * n + i) * 10 + j));
  }
  CHECK_THROWS_AS(split_outputs(e, 3, n), ValidationError);
}

TEST_CASE("backbone gradients") {
  Backbone bb(tiny_cfg(1));
  Rng rng(5);
  bb.init(rng);
  // The default init is tiny (0.02 scale); finite differences need the
  // parameters well above the step size, so redraw them at 0.3.
  for (nn::Param* p : bb.params()) {
    testutil::fill_normal(p->value, rng, 0.3);
    if (p->name.find("_g") != std::string::npos)
      for (int64_t i = 0; i < p->value.size(); ++i) p->value[i] += Real(1);
  }
  const int L = 6;
  Tensor x({L, 12});
  testutil::fill_normal(x, rng, 1.0);
  BackboneActs acts;
  Tensor y;
  auto loss = [&] {
    y = bb.forward(x, acts);
    double acc = 0;
    for (int64_t i = 0; i < y.size(); ++i) acc += 0.5 * double(y[i]) * double(y[i]);
    return acc;
  };
  loss();
  for (nn::Param* p : bb.params()) p->zero_grad();
  Tensor dx = bb.backward(y, acts);

  for (nn::Param* p : bb.params()) {
    if (p->name.find("bk") != std::string::npos) continue;  // softmax null direction
    auto r = testutil::fd_check_tensor(p->value, p->grad, loss, rng, 40, 8, 1e-2);
    INFO(p->name);
    CHECK(r.max_rel < 2e-3);
  }
  CHECK(testutil::fd_check_tensor(x, dx, loss, rng, 40, 10, 1e-2).max_rel < 2e-3);
}
