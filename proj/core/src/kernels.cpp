#include "flowcast/kernels.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace flowcast::nn {

namespace {

using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using CMatMap = Eigen::Map<const Mat>;
using StrideMap = Eigen::Map<Mat, 0, Eigen::OuterStride<>>;
using CStrideMap = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;
using RowMap = Eigen::Map<Eigen::Matrix<Real, 1, Eigen::Dynamic>>;
using CRowMap = Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>>;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

bool finite_span(const Real* p, int64_t n) {
  for (int64_t i = 0; i < n; ++i)
    if (!std::isfinite(static_cast<double>(p[i]))) return false;
  return true;
}

}  // namespace

void linear_forward(const Real* x, const Real* w, const Real* b, Real* y, int n, int d_in,
                    int d_out) {
  CMatMap X(x, n, d_in), W(w, d_out, d_in);
  MatMap Y(y, n, d_out);
  Y.noalias() = X * W.transpose();
  if (b) {
    CRowMap B(b, d_out);
    Y.rowwise() += B;
  }
}

void linear_backward(const Real* x, const Real* w, const Real* dy, Real* dx, Real* dw,
                     Real* db, int n, int d_in, int d_out) {
  CMatMap X(x, n, d_in), W(w, d_out, d_in), DY(dy, n, d_out);
  if (dx) {
    MatMap DX(dx, n, d_in);
    DX.noalias() = DY * W;
  }
  if (dw) {
    MatMap DW(dw, d_out, d_in);
    DW.noalias() += DY.transpose() * X;
  }
  if (db) {
    RowMap DB(db, d_out);
    DB += DY.colwise().sum();
  }
}

void leaky_relu_forward(const Real* x, Real* y, int64_t n, Real slope) {
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] > Real(0) ? x[i] : slope * x[i];
}

void leaky_relu_backward(const Real* x, const Real* dy, Real* dx, int64_t n, Real slope) {
  for (int64_t i = 0; i < n; ++i) dx[i] = x[i] > Real(0) ? dy[i] : slope * dy[i];
}

void gelu_forward(const Real* x, Real* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    const double xi = static_cast<double>(x[i]);
    y[i] = static_cast<Real>(0.5 * xi * (1.0 + std::erf(xi * kInvSqrt2)));
  }
}

void gelu_backward(const Real* x, const Real* dy, Real* dx, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    const double xi = static_cast<double>(x[i]);
    const double cdf = 0.5 * (1.0 + std::erf(xi * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xi * xi);
    dx[i] = static_cast<Real>(static_cast<double>(dy[i]) * (cdf + xi * pdf));
  }
}

void layer_norm_forward(const Real* x, const Real* gamma, const Real* beta, Real* y,
                        Real* mean, Real* rstd, int n, int d) {
  for (int i = 0; i < n; ++i) {
    const Real* xi = x + static_cast<size_t>(i) * d;
    double sum = 0;
    for (int j = 0; j < d; ++j) sum += xi[j];
    const double mu = sum / d;
    double var = 0;
    for (int j = 0; j < d; ++j) {
      const double c = xi[j] - mu;
      var += c * c;
    }
    var /= d;
    const double r = 1.0 / std::sqrt(var + static_cast<double>(kLayerNormEps));
    mean[i] = static_cast<Real>(mu);
    rstd[i] = static_cast<Real>(r);
    Real* yi = y + static_cast<size_t>(i) * d;
    for (int j = 0; j < d; ++j)
      yi[j] = static_cast<Real>((xi[j] - mu) * r) * gamma[j] + beta[j];
  }
}

void layer_norm_backward(const Real* x, const Real* gamma, const Real* mean,
                         const Real* rstd, const Real* dy, Real* dx, Real* dgamma,
                         Real* dbeta, int n, int d) {
  for (int i = 0; i < n; ++i) {
    const Real* xi = x + static_cast<size_t>(i) * d;
    const Real* dyi = dy + static_cast<size_t>(i) * d;
    Real* dxi = dx + static_cast<size_t>(i) * d;
    const double mu = mean[i], r = rstd[i];
    double m1 = 0, m2 = 0;
    for (int j = 0; j < d; ++j) {
      const double xhat = (xi[j] - mu) * r;
      const double dh = static_cast<double>(dyi[j]) * gamma[j];
      m1 += dh;
      m2 += dh * xhat;
    }
    m1 /= d;
    m2 /= d;
    for (int j = 0; j < d; ++j) {
      const double xhat = (xi[j] - mu) * r;
      const double dh = static_cast<double>(dyi[j]) * gamma[j];
      dxi[j] = static_cast<Real>(r * (dh - m1 - xhat * m2));
      if (dgamma) dgamma[j] += dyi[j] * static_cast<Real>(xhat);
      if (dbeta) dbeta[j] += dyi[j];
    }
  }
}

void softmax_row(Real* row, int valid, int width) {
  Real mx = row[0];
  for (int j = 1; j < valid; ++j) mx = std::max(mx, row[j]);
  double sum = 0;
  for (int j = 0; j < valid; ++j) {
    const double e = std::exp(static_cast<double>(row[j] - mx));
    row[j] = static_cast<Real>(e);
    sum += e;
  }
  const Real inv = static_cast<Real>(1.0 / sum);
  for (int j = 0; j < valid; ++j) row[j] *= inv;
  for (int j = valid; j < width; ++j) row[j] = Real(0);
}

Mlp2::Mlp2(const std::string& prefix, int d_in, int hidden, int d_out)
    : w1(prefix + "/w1", {hidden, d_in}),
      b1(prefix + "/b1", {hidden}),
      w2(prefix + "/w2", {d_out, hidden}),
      b2(prefix + "/b2", {d_out}) {}

void Mlp2::forward(const Real* x, Real* y, int n, Mlp2Acts& acts) const {
  const int h = hidden();
  acts.h_pre = Tensor({n, h});
  acts.h_post = Tensor({n, h});
  linear_forward(x, w1.value.data(), b1.value.data(), acts.h_pre.data(), n, d_in(), h);
  leaky_relu_forward(acts.h_pre.data(), acts.h_post.data(), acts.h_pre.size());
  linear_forward(acts.h_post.data(), w2.value.data(), b2.value.data(), y, n, h, d_out());
}

void Mlp2::backward(const Real* x, const Real* dy, Real* dx, int n, const Mlp2Acts& acts) {
  const int h = hidden();
  Tensor dh({n, h});
  linear_backward(acts.h_post.data(), w2.value.data(), dy, dh.data(), w2.grad.data(),
                  b2.grad.data(), n, h, d_out());
  leaky_relu_backward(acts.h_pre.data(), dh.data(), dh.data(), dh.size());
  linear_backward(x, w1.value.data(), dh.data(), dx, w1.grad.data(), b1.grad.data(), n,
                  d_in(), h);
}

std::vector<Param*> Mlp2::params() { return {&w1, &b1, &w2, &b2}; }

void mha_forward(const Real* x, int L, int d, int heads, const AttnWeights& w,
                 AttnActs& acts, Real* y) {
  if (d % heads != 0) throw ValidationError("attention: d_model not divisible by heads");
  if (!finite_span(x, static_cast<int64_t>(L) * d))
    throw RuntimeFailure("attention: non-finite input");
  const int dk = d / heads;
  const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dk)));
  acts.q = Tensor({L, d});
  acts.k = Tensor({L, d});
  acts.v = Tensor({L, d});
  acts.probs = Tensor({heads, L, L});
  acts.att = Tensor({L, d});
  linear_forward(x, w.wq, w.bq, acts.q.data(), L, d, d);
  linear_forward(x, w.wk, w.bk, acts.k.data(), L, d, d);
  linear_forward(x, w.wv, w.bv, acts.v.data(), L, d, d);
  const Eigen::OuterStride<> stride(d);
  for (int h = 0; h < heads; ++h) {
    CStrideMap Q(acts.q.data() + h * dk, L, dk, stride);
    CStrideMap K(acts.k.data() + h * dk, L, dk, stride);
    CStrideMap V(acts.v.data() + h * dk, L, dk, stride);
    Real* probs = acts.probs.data() + static_cast<size_t>(h) * L * L;
    MatMap P(probs, L, L);
    P.noalias() = (Q * K.transpose()) * scale;
    for (int i = 0; i < L; ++i) softmax_row(probs + static_cast<size_t>(i) * L, i + 1, L);
    StrideMap O(acts.att.data() + h * dk, L, dk, stride);
    O.noalias() = P * V;
  }
  linear_forward(acts.att.data(), w.wo, w.bo, y, L, d, d);
}

void mha_backward(const Real* x, const Real* dy, int L, int d, int heads,
                  const AttnWeights& w, const AttnActs& acts, const AttnGrads& g, Real* dx) {
  const int dk = d / heads;
  const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dk)));
  Tensor datt({L, d}), dq({L, d}), dkt({L, d}), dv({L, d});
  linear_backward(acts.att.data(), w.wo, dy, datt.data(), g.wo, g.bo, L, d, d);
  const Eigen::OuterStride<> stride(d);
  Tensor dp({L, L});
  for (int h = 0; h < heads; ++h) {
    CStrideMap Q(acts.q.data() + h * dk, L, dk, stride);
    CStrideMap K(acts.k.data() + h * dk, L, dk, stride);
    CStrideMap V(acts.v.data() + h * dk, L, dk, stride);
    CStrideMap DO(datt.data() + h * dk, L, dk, stride);
    const Real* probs = acts.probs.data() + static_cast<size_t>(h) * L * L;
    CMatMap P(probs, L, L);
    MatMap DP(dp.data(), L, L);
    DP.noalias() = DO * V.transpose();
    StrideMap DV(dv.data() + h * dk, L, dk, stride);
    DV.noalias() = P.transpose() * DO;
    // softmax backward per row; masked entries have prob 0 so they drop out
    for (int i = 0; i < L; ++i) {
      const Real* pi = probs + static_cast<size_t>(i) * L;
      Real* dpi = dp.data() + static_cast<size_t>(i) * L;
      double dot = 0;
      for (int j = 0; j <= i; ++j) dot += static_cast<double>(pi[j]) * dpi[j];
      for (int j = 0; j <= i; ++j)
        dpi[j] = pi[j] * (dpi[j] - static_cast<Real>(dot));
      for (int j = i + 1; j < L; ++j) dpi[j] = Real(0);
    }
    StrideMap DQ(dq.data() + h * dk, L, dk, stride);
    StrideMap DK(dkt.data() + h * dk, L, dk, stride);
    DQ.noalias() = (DP * K) * scale;
    DK.noalias() = (DP.transpose() * Q) * scale;
  }
  Tensor scratch({L, d});
  linear_backward(x, w.wq, dq.data(), dx, g.wq, g.bq, L, d, d);
  linear_backward(x, w.wk, dkt.data(), scratch.data(), g.wk, g.bk, L, d, d);
  if (dx) {
    MatMap DX(dx, L, d);
    DX += CMatMap(scratch.data(), L, d);
  }
  linear_backward(x, w.wv, dv.data(), scratch.data(), g.wv, g.bv, L, d, d);
  if (dx) {
    MatMap DX(dx, L, d);
    DX += CMatMap(scratch.data(), L, d);
  }
}

void mha_forward_cached(const Real* x_new, int L_new, int d, int heads,
                        const AttnWeights& w, KvCache& cache, Real* y) {
  if (d % heads != 0) throw ValidationError("attention: d_model not divisible by heads");
  const int max_len = cache.k.dim(0);
  if (cache.len + L_new > max_len)
    throw ValidationError("attention cache: sequence exceeds max length");
  const int dk = d / heads;
  const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dk)));
  const int past = cache.len;
  Tensor q({L_new, d});
  linear_forward(x_new, w.wq, w.bq, q.data(), L_new, d, d);
  linear_forward(x_new, w.wk, w.bk, cache.k.data() + static_cast<size_t>(past) * d, L_new,
                 d, d);
  linear_forward(x_new, w.wv, w.bv, cache.v.data() + static_cast<size_t>(past) * d, L_new,
                 d, d);
  cache.len += L_new;
  Tensor att({L_new, d});
  std::vector<Real> srow(static_cast<size_t>(cache.len));
  for (int h = 0; h < heads; ++h) {
    const Eigen::OuterStride<> stride(d);
    CStrideMap Q(q.data() + h * dk, L_new, dk, stride);
    CStrideMap K(cache.k.data() + h * dk, cache.len, dk, stride);
    CStrideMap V(cache.v.data() + h * dk, cache.len, dk, stride);
    for (int i = 0; i < L_new; ++i) {
      const int valid = past + i + 1;
      for (int j = 0; j < valid; ++j)
        srow[j] = scale * Q.row(i).dot(K.row(j));
      softmax_row(srow.data(), valid, valid);
      Real* out = att.data() + static_cast<size_t>(i) * d + h * dk;
      for (int c = 0; c < dk; ++c) out[c] = Real(0);
      for (int j = 0; j < valid; ++j) {
        const Real p = srow[j];
        for (int c = 0; c < dk; ++c) out[c] += p * V(j, c);
      }
    }
  }
  linear_forward(att.data(), w.wo, w.bo, y, L_new, d, d);
}

std::vector<uint8_t> causal_mask(int L) {
  if (L < 1) throw ValidationError("causal_mask: L must be positive");
  std::vector<uint8_t> m(static_cast<size_t>(L) * L, 0);
  for (int i = 0; i < L; ++i)
    for (int j = 0; j <= i; ++j) m[static_cast<size_t>(i) * L + j] = 1;
  return m;
}

}  // namespace flowcast::nn
