#pragma once

// Shared test utilities: independent oracles and finite-difference checking.
// Oracles are deliberately written as plain loops, structured differently
// from the library implementations they verify.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowcast/field.hpp"
#include "flowcast/kernels.hpp"
#include "flowcast/rng.hpp"
#include "flowcast/tensor.hpp"

namespace testutil {

// Maclaurin series erf, term recurrence t_{n+1} = -t_n x^2 / (n+1); accurate
// to ~1e-10 absolute for |x| <= 4.5, and erf is 1 to 2e-10 beyond that.
inline double oracle_erf(double x) {
  if (x < 0) return -oracle_erf(-x);
  if (x > 4.5) return 1.0;
  const double x2 = x * x;
  double term = x;
  double sum = 0.0;
  for (int n = 0; n < 200; ++n) {
    sum += term / (2 * n + 1);
    term *= -x2 / (n + 1);
    if (std::abs(term) < 1e-17) break;
  }
  return sum * 2.0 / std::sqrt(std::acos(-1.0));
}

// Brute-force barycentric interpolation: first containing triangle in input
// order wins, otherwise nearest node (lowest index on ties).
inline double oracle_interpolate_point(const flowcast::IrregularMesh& mesh, double px,
                                       double py, int channel) {
  for (const auto& tri : mesh.triangles) {
    const auto& a = mesh.node_positions[static_cast<size_t>(tri[0])];
    const auto& b = mesh.node_positions[static_cast<size_t>(tri[1])];
    const auto& c = mesh.node_positions[static_cast<size_t>(tri[2])];
    const double det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    if (det == 0.0) continue;
    const double la =
        ((b[0] - px) * (c[1] - py) - (b[1] - py) * (c[0] - px)) / det;
    const double lb =
        ((c[0] - px) * (a[1] - py) - (c[1] - py) * (a[0] - px)) / det;
    const double lc = 1.0 - la - lb;
    if (la >= -1e-12 && lb >= -1e-12 && lc >= -1e-12)
      return la * mesh.value(tri[0], channel) + lb * mesh.value(tri[1], channel) +
             lc * mesh.value(tri[2], channel);
  }
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int n = 0; n < mesh.node_count(); ++n) {
    const double ex = mesh.node_positions[static_cast<size_t>(n)][0] - px;
    const double ey = mesh.node_positions[static_cast<size_t>(n)][1] - py;
    if (ex * ex + ey * ey < best_d) {
      best_d = ex * ex + ey * ey;
      best = n;
    }
  }
  return mesh.value(best, channel);
}

// Jittered-lattice triangulation: rows x cols nodes, two triangles per quad.
// Always valid, never degenerate, covers most of [0, cols-1] x [0, rows-1].
inline flowcast::IrregularMesh random_mesh(flowcast::Rng& rng, int rows, int cols,
                                           int channels) {
  flowcast::IrregularMesh mesh;
  mesh.channels = channels;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      mesh.node_positions.push_back(
          {c + rng.uniform(-0.3, 0.3), r + rng.uniform(-0.3, 0.3)});
      for (int ch = 0; ch < channels; ++ch) mesh.node_values.push_back(rng.normal());
    }
  for (int r = 0; r + 1 < rows; ++r)
    for (int c = 0; c + 1 < cols; ++c) {
      const int n00 = r * cols + c, n01 = n00 + 1;
      const int n10 = n00 + cols, n11 = n10 + 1;
      mesh.triangles.push_back({n00, n01, n11});
      mesh.triangles.push_back({n00, n11, n10});
    }
  return mesh;
}

inline void fill_normal(flowcast::Tensor& t, flowcast::Rng& rng, double scale = 0.1) {
  for (int64_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<flowcast::Real>(scale * rng.normal());
}

inline bool bits_equal(const flowcast::Tensor& a, const flowcast::Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (int64_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

inline void fill_normal_state(flowcast::FlowState& s, flowcast::Rng& rng,
                              double scale = 0.5) {
  for (auto& v : s.values) v = static_cast<flowcast::Real>(scale * rng.normal());
}

// Central-difference gradient check. loss() must recompute the forward pass
// from current parameter values. Checks the n_keep coordinates with the
// largest analytic |g| among n_sample uniformly sampled ones.
struct FdResult {
  double max_rel = 0;
  int checked = 0;
  int64_t worst_index = -1;
};

inline FdResult fd_check_tensor(flowcast::Tensor& value, const flowcast::Tensor& grad,
                                const std::function<double()>& loss, flowcast::Rng& rng,
                                int n_sample, int n_keep, double h = 1e-3,
                                double floor_abs = 1e-4) {
  std::vector<int64_t> idx;
  if (value.size() <= n_sample) {
    for (int64_t i = 0; i < value.size(); ++i) idx.push_back(i);
  } else {
    for (int i = 0; i < n_sample; ++i)
      idx.push_back(rng.uniform_int(0, static_cast<int>(value.size() - 1)));
    std::sort(idx.begin(), idx.end());
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  }
  std::sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
    return std::abs(grad[a]) > std::abs(grad[b]);
  });
  if (static_cast<int>(idx.size()) > n_keep) idx.resize(static_cast<size_t>(n_keep));

  FdResult r;
  for (int64_t i : idx) {
    const flowcast::Real old = value[i];
    value[i] = old + static_cast<flowcast::Real>(h);
    const double lp = loss();
    value[i] = old - static_cast<flowcast::Real>(h);
    const double lm = loss();
    value[i] = old;
    const double fd = (lp - lm) / (2 * h);
    const double g = static_cast<double>(grad[i]);
    const double rel =
        std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), floor_abs});
    if (rel > r.max_rel) {
      r.max_rel = rel;
      r.worst_index = i;
    }
    ++r.checked;
  }
  return r;
}

// Pooled gradient check over a whole parameter group. Ranks every coordinate
// in the group by analytic |g| and finite-differences the top_k. Ranking by
// magnitude keeps the check away from coordinates where the float-pipeline
// difference quotient is mostly rounding noise.
struct GroupFdResult {
  double max_rel = 0;
  int checked = 0;
  std::string worst;
};

inline GroupFdResult fd_check_params(const std::vector<flowcast::nn::Param*>& params,
                                     const std::function<double()>& loss, int top_k,
                                     double h, double floor_abs = 1e-3) {
  struct Coord {
    flowcast::nn::Param* p;
    int64_t i;
    double mag;
  };
  std::vector<Coord> coords;
  for (flowcast::nn::Param* p : params)
    for (int64_t i = 0; i < p->grad.size(); ++i)
      coords.push_back({p, i, std::abs(static_cast<double>(p->grad[i]))});
  std::sort(coords.begin(), coords.end(),
            [](const Coord& a, const Coord& b) { return a.mag > b.mag; });
  if (static_cast<int>(coords.size()) > top_k) coords.resize(static_cast<size_t>(top_k));

  GroupFdResult r;
  for (const Coord& c : coords) {
    flowcast::Tensor& value = c.p->value;
    const flowcast::Real old = value[c.i];
    value[c.i] = old + static_cast<flowcast::Real>(h);
    const double lp = loss();
    value[c.i] = old - static_cast<flowcast::Real>(h);
    const double lm = loss();
    value[c.i] = old;
    const double fd = (lp - lm) / (2 * h);
    const double g = static_cast<double>(c.p->grad[c.i]);
    const double rel =
        std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), floor_abs});
    if (rel > r.max_rel) {
      r.max_rel = rel;
      r.worst = c.p->name + "[" + std::to_string(c.i) + "]";
    }
    ++r.checked;
  }
  return r;
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(is),
                     std::istreambuf_iterator<char>());
}

}  // namespace testutil
