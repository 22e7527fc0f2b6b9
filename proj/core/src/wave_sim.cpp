#include "flowcast/wave_sim.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <filesystem>
#include <functional>
#include <limits>
#include <numbers>
#include <thread>

namespace flowcast::wave {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool grid_finite(const Grid2D& g) {
  for (double x : g.a)
    if (!std::isfinite(x)) return false;
  return true;
}

void check_same_size(const Grid2D& a, const Grid2D& b, const char* what) {
  if (a.size != b.size)
    throw ValidationError(std::string(what) + ": grid sizes differ");
}

double cross(const std::array<double, 2>& o, const std::array<double, 2>& a,
             const std::array<double, 2>& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

}  // namespace

Grid2D gaussian_pulse(int grid, double cx, double cy, double sigma, double amplitude) {
  if (grid < 1) throw ValidationError("gaussian_pulse: grid must be positive");
  if (sigma <= 0) throw ValidationError("gaussian_pulse: sigma must be positive");
  Grid2D g(grid);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int y = 0; y < grid; ++y)
    for (int x = 0; x < grid; ++x) {
      const double dx = x - cx, dy = y - cy;
      g.at(y, x) = amplitude * std::exp(-(dx * dx + dy * dy) * inv);
    }
  return g;
}

Grid2D plane_wave(int grid, double angle, double wavelength, double phase, double amplitude) {
  if (grid < 1) throw ValidationError("plane_wave: grid must be positive");
  if (wavelength <= 0) throw ValidationError("plane_wave: wavelength must be positive");
  Grid2D g(grid);
  const double k = 2.0 * std::numbers::pi / wavelength;
  const double kx = k * std::cos(angle), ky = k * std::sin(angle);
  for (int y = 0; y < grid; ++y)
    for (int x = 0; x < grid; ++x)
      g.at(y, x) = amplitude * std::sin(kx * x + ky * y + phase);
  return g;
}

BoundaryMask rect_mask(int grid, int x0, int y0, int x1, int y1) {
  if (x0 < 0 || y0 < 0 || x1 < x0 || y1 < y0 || x1 >= grid || y1 >= grid)
    throw ValidationError("rect_mask: rectangle out of range");
  BoundaryMask m(grid, grid, 3);
  std::fill(m.mask.begin(), m.mask.end(), uint8_t(1));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) m.set(y, x, false);
  return m;
}

BoundaryMask ellipse_mask(int grid, double cx, double cy, double semi_a, double semi_b,
                          double theta) {
  if (semi_a <= 0 || semi_b <= 0)
    throw ValidationError("ellipse_mask: semi-axes must be positive");
  BoundaryMask m(grid, grid, 3);
  const double ct = std::cos(theta), st = std::sin(theta);
  for (int y = 0; y < grid; ++y)
    for (int x = 0; x < grid; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double xr = dx * ct + dy * st;
      const double yr = -dx * st + dy * ct;
      const double r = (xr / semi_a) * (xr / semi_a) + (yr / semi_b) * (yr / semi_b);
      m.set(y, x, r > 1.0);
    }
  return m;
}

std::vector<std::array<double, 2>> convex_hull(std::vector<std::array<double, 2>> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  const int n = static_cast<int>(pts.size());
  if (n < 3) return pts;
  std::vector<std::array<double, 2>> hull(2 * n);
  int k = 0;
  for (int i = 0; i < n; ++i) {  // lower
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (int i = n - 2, lo = k + 1; i >= 0; --i) {  // upper
    while (k >= lo && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);  // last point repeats the first
  return hull;
}

BoundaryMask hull_mask(int grid, std::span<const std::array<double, 2>> points) {
  std::vector<std::array<double, 2>> pts(points.begin(), points.end());
  auto hull = convex_hull(std::move(pts));
  BoundaryMask m(grid, grid, 3);
  if (hull.size() < 3) {  // degenerate; caller resamples
    std::fill(m.mask.begin(), m.mask.end(), uint8_t(1));
    return m;
  }
  const int h = static_cast<int>(hull.size());
  for (int y = 0; y < grid; ++y)
    for (int x = 0; x < grid; ++x) {
      const std::array<double, 2> p{static_cast<double>(x), static_cast<double>(y)};
      bool inside = true;
      for (int i = 0; i < h && inside; ++i)
        inside = cross(hull[i], hull[(i + 1) % h], p) >= -1e-12;
      m.set(y, x, !inside);
    }
  return m;
}

namespace {

// Sum of k randomly placed Gaussian pulses; draw order per pulse is
// cx, cy, sigma, amplitude.
Grid2D random_pulses(Rng& rng, int grid, int k) {
  Grid2D g(grid);
  for (int i = 0; i < k; ++i) {
    const double cx = rng.uniform(0.0, grid - 1.0);
    const double cy = rng.uniform(0.0, grid - 1.0);
    const double sigma = rng.uniform(3.0, std::min(15.0, grid / 4.0));
    const double amp = rng.uniform(-1.0, 1.0);
    Grid2D p = gaussian_pulse(grid, cx, cy, sigma, amp);
    for (size_t j = 0; j < g.a.size(); ++j) g.a[j] += p.a[j];
  }
  return g;
}

// Sum of k plane waves; draw order per wave is angle, wavelength, phase,
// amplitude.
Grid2D random_plane_waves(Rng& rng, int grid, int k) {
  Grid2D g(grid);
  for (int i = 0; i < k; ++i) {
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double wavelength = rng.uniform(10.0, std::min(50.0, static_cast<double>(grid)));
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double amp = rng.uniform(-1.0, 1.0);
    Grid2D w = plane_wave(grid, angle, wavelength, phase, amp);
    for (size_t j = 0; j < g.a.size(); ++j) g.a[j] += w.a[j];
  }
  return g;
}

Grid2D random_field(Rng& rng, InitKind kind, int grid) {
  switch (kind) {
    case InitKind::pulses:
      return random_pulses(rng, grid, static_cast<int>(rng.uniform_int(1, 4)));
    case InitKind::plane_waves:
      return random_plane_waves(rng, grid, static_cast<int>(rng.uniform_int(1, 4)));
    case InitKind::mixed: {
      Grid2D g = random_pulses(rng, grid, 1);
      Grid2D w = random_plane_waves(rng, grid, 1);
      for (size_t j = 0; j < g.a.size(); ++j) g.a[j] += w.a[j];
      return g;
    }
  }
  throw ValidationError("gen_initial_condition: unknown kind");
}

}  // namespace

std::pair<Grid2D, Grid2D> gen_initial_condition(Rng& rng, InitKind kind, int grid) {
  if (grid < 8) throw ValidationError("gen_initial_condition: grid too small");
  Grid2D u0 = random_field(rng, kind, grid);
  Grid2D v0 = random_field(rng, kind, grid);
  return {std::move(u0), std::move(v0)};
}

BoundaryMask gen_boundary(Rng& rng, BoundaryKind kind, int grid) {
  if (grid < 8) throw ValidationError("gen_boundary: grid too small");
  // Side lengths target [30, 90] cells, clamped for small grids.
  const int side_lo = std::min(30, std::max(4, grid / 3));
  const int side_hi = std::max(side_lo, std::min(90, grid - 2));
  const double ax_lo = std::min(15.0, 0.15 * grid);
  const double ax_hi = std::max(ax_lo, std::min(45.0, 0.45 * grid));
  for (int attempt = 0; attempt < 64; ++attempt) {
    BoundaryMask m;
    switch (kind) {
      case BoundaryKind::rect: {
        const int w = static_cast<int>(rng.uniform_int(side_lo, side_hi));
        const int h = static_cast<int>(rng.uniform_int(side_lo, side_hi));
        const int x0 = static_cast<int>(rng.uniform_int(0, grid - w));
        const int y0 = static_cast<int>(rng.uniform_int(0, grid - h));
        m = rect_mask(grid, x0, y0, x0 + w - 1, y0 + h - 1);
        break;
      }
      case BoundaryKind::ellipse: {
        const double sa = rng.uniform(ax_lo, ax_hi);
        const double sb = rng.uniform(ax_lo, ax_hi);
        const double theta = rng.uniform(0.0, std::numbers::pi);
        const double margin = std::max(sa, sb);
        const double c_lo = std::min(margin, (grid - 1) / 2.0);
        const double c_hi = std::max(c_lo, grid - 1 - margin);
        const double cx = rng.uniform(c_lo, c_hi);
        const double cy = rng.uniform(c_lo, c_hi);
        m = ellipse_mask(grid, cx, cy, sa, sb, theta);
        break;
      }
      case BoundaryKind::hull: {
        std::vector<std::array<double, 2>> pts(20);
        for (auto& p : pts) {
          p[0] = rng.uniform(0.0, grid - 1.0);
          p[1] = rng.uniform(0.0, grid - 1.0);
        }
        m = hull_mask(grid, pts);
        break;
      }
    }
    if (m.interior_count() >= 4) return m;
  }
  throw RuntimeFailure("gen_boundary: degenerate region after 64 attempts");
}

Grid2D smooth_and_mask(const Grid2D& field, const BoundaryMask& boundary, double d0,
                       double sigma) {
  if (boundary.width != field.size || boundary.height != field.size)
    throw ValidationError("smooth_and_mask: mask shape mismatch");
  const int n = field.size;
  Grid2D g = field;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      if (boundary.at(y, x)) g.at(y, x) = 0.0;

  // Chebyshev distance to the nearest exterior cell via two-pass chamfer
  // over the 8-neighborhood (exact for the chessboard metric).
  std::vector<double> d(static_cast<size_t>(n) * n, kInf);
  bool any_exterior = false;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      if (boundary.at(y, x)) {
        d[static_cast<size_t>(y) * n + x] = 0.0;
        any_exterior = true;
      }
  if (any_exterior && d0 > 0) {
    auto dist = [&](int y, int x) -> double& { return d[static_cast<size_t>(y) * n + x]; };
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        double best = dist(y, x);
        if (y > 0) {
          best = std::min(best, dist(y - 1, x) + 1);
          if (x > 0) best = std::min(best, dist(y - 1, x - 1) + 1);
          if (x < n - 1) best = std::min(best, dist(y - 1, x + 1) + 1);
        }
        if (x > 0) best = std::min(best, dist(y, x - 1) + 1);
        dist(y, x) = best;
      }
    for (int y = n - 1; y >= 0; --y)
      for (int x = n - 1; x >= 0; --x) {
        double best = dist(y, x);
        if (y < n - 1) {
          best = std::min(best, dist(y + 1, x) + 1);
          if (x > 0) best = std::min(best, dist(y + 1, x - 1) + 1);
          if (x < n - 1) best = std::min(best, dist(y + 1, x + 1) + 1);
        }
        if (x < n - 1) best = std::min(best, dist(y, x + 1) + 1);
        dist(y, x) = best;
      }
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        g.at(y, x) *= std::min(1.0, dist(y, x) / d0);
  }

  if (sigma > 0) {
    // Separable Gaussian, zero padding past the array edges.
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> w(2 * r + 1);
    double wsum = 0;
    for (int i = -r; i <= r; ++i) {
      w[i + r] = std::exp(-(i * i) / (2.0 * sigma * sigma));
      wsum += w[i + r];
    }
    for (double& wi : w) wi /= wsum;
    Grid2D tmp(n);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        double acc = 0;
        for (int i = -r; i <= r; ++i) {
          const int xx = x + i;
          if (xx >= 0 && xx < n) acc += w[i + r] * g.at(y, xx);
        }
        tmp.at(y, x) = acc;
      }
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        double acc = 0;
        for (int i = -r; i <= r; ++i) {
          const int yy = y + i;
          if (yy >= 0 && yy < n) acc += w[i + r] * tmp.at(yy, x);
        }
        g.at(y, x) = acc;
      }
  }

  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      if (boundary.at(y, x)) g.at(y, x) = 0.0;
  return g;
}

Grid2D laplacian(const Grid2D& f) {
  const int n = f.size;
  Grid2D out(n);
  for (int y = 1; y < n - 1; ++y)
    for (int x = 1; x < n - 1; ++x)
      out.at(y, x) = f.at(y, x - 1) + f.at(y, x + 1) + f.at(y - 1, x) + f.at(y + 1, x) -
                     4.0 * f.at(y, x);
  return out;
}

void wave_rhs(const Grid2D& u, const Grid2D& v, double c, Grid2D& du_dt, Grid2D& dv_dt) {
  check_same_size(u, v, "wave_rhs");
  if (!grid_finite(u) || !grid_finite(v))
    throw RuntimeFailure("wave_rhs: non-finite input");
  if (!(c >= 0) || !std::isfinite(c))
    throw ValidationError("wave_rhs: wave speed must be finite and non-negative");
  du_dt = v;
  dv_dt = laplacian(u);
  if (c == 0.0) {
    std::fill(dv_dt.a.begin(), dv_dt.a.end(), 0.0);
    return;
  }
  const double k = 0.1 / c;
  for (size_t i = 0; i < dv_dt.a.size(); ++i)
    dv_dt.a[i] = c * std::erf(k * (dv_dt.a[i] - v.a[i]));
}

void rk4_step(Grid2D& u, Grid2D& v, double c, double h, const BoundaryMask* boundary) {
  const int n = u.size;
  auto mask_derivs = [&](Grid2D& du, Grid2D& dv) {
    if (!boundary) return;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        if (boundary->at(y, x)) {
          du.at(y, x) = 0.0;
          dv.at(y, x) = 0.0;
        }
  };
  Grid2D k1u(n), k1v(n), k2u(n), k2v(n), k3u(n), k3v(n), k4u(n), k4v(n);
  Grid2D tu(n), tv(n);
  auto blend = [&](const Grid2D& ku, const Grid2D& kv, double s) {
    for (size_t i = 0; i < tu.a.size(); ++i) {
      tu.a[i] = u.a[i] + s * ku.a[i];
      tv.a[i] = v.a[i] + s * kv.a[i];
    }
  };
  wave_rhs(u, v, c, k1u, k1v);
  mask_derivs(k1u, k1v);
  blend(k1u, k1v, h / 2);
  wave_rhs(tu, tv, c, k2u, k2v);
  mask_derivs(k2u, k2v);
  blend(k2u, k2v, h / 2);
  wave_rhs(tu, tv, c, k3u, k3v);
  mask_derivs(k3u, k3v);
  blend(k3u, k3v, h);
  wave_rhs(tu, tv, c, k4u, k4v);
  mask_derivs(k4u, k4v);
  for (size_t i = 0; i < u.a.size(); ++i) {
    u.a[i] += h / 6.0 * (k1u.a[i] + 2 * k2u.a[i] + 2 * k3u.a[i] + k4u.a[i]);
    v.a[i] += h / 6.0 * (k1v.a[i] + 2 * k2v.a[i] + 2 * k3v.a[i] + k4v.a[i]);
  }
  if (boundary) {
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        if (boundary->at(y, x)) {
          u.at(y, x) = 0.0;
          v.at(y, x) = 0.0;
        }
  }
}

WaveTrajectory integrate(const Grid2D& u0, const Grid2D& v0, const BoundaryMask* boundary,
                         double c, int n_record, double dt_record, int substeps) {
  check_same_size(u0, v0, "integrate");
  if (boundary && (boundary->width != u0.size || boundary->height != u0.size))
    throw ValidationError("integrate: mask shape mismatch");
  if (n_record < 1) throw ValidationError("integrate: n_record must be positive");
  if (!(dt_record > 0)) throw ValidationError("integrate: dt_record must be positive");
  if (substeps < 1) throw ValidationError("integrate: substeps must be positive");
  if (!grid_finite(u0) || !grid_finite(v0))
    throw ValidationError("integrate: non-finite initial condition");

  WaveTrajectory traj;
  traj.c = c;
  traj.u.reserve(n_record);
  traj.v.reserve(n_record);
  Grid2D u = u0, v = v0;
  if (boundary) {
    for (int y = 0; y < u.size; ++y)
      for (int x = 0; x < u.size; ++x)
        if (boundary->at(y, x)) {
          u.at(y, x) = 0.0;
          v.at(y, x) = 0.0;
        }
  }
  traj.u.push_back(u);
  traj.v.push_back(v);
  const double h = dt_record / substeps;
  for (int r = 1; r < n_record; ++r) {
    for (int s = 0; s < substeps; ++s) {
      rk4_step(u, v, c, h, boundary);
      if (!grid_finite(u) || !grid_finite(v))
        throw RuntimeFailure("integrate: diverged at record " + std::to_string(r) +
                             ", substep " + std::to_string(s));
    }
    traj.u.push_back(u);
    traj.v.push_back(v);
  }
  return traj;
}

Trajectory assemble_states(const WaveTrajectory& traj) {
  Trajectory out;
  out.pde_constant = static_cast<Real>(traj.c);
  out.states.reserve(traj.u.size());
  for (size_t t = 0; t < traj.u.size(); ++t) {
    const Grid2D& u = traj.u[t];
    const Grid2D& v = traj.v[t];
    FlowState s(u.size, u.size, 3);
    s.channel_names = {"u", "u", "du_dt"};
    for (int y = 0; y < u.size; ++y)
      for (int x = 0; x < u.size; ++x) {
        const Real uv = static_cast<Real>(u.at(y, x));
        s.at(y, x, 0) = uv;
        s.at(y, x, 1) = uv;
        s.at(y, x, 2) = static_cast<Real>(v.at(y, x));
      }
    out.states.push_back(std::move(s));
  }
  return out;
}

SampleDraw draw_sample(uint64_t seed, uint64_t index, const WaveConfig& config) {
  // Per-sample draw order: c, init kind, boundary kind, boundary params,
  // u0 field, v0 field. Changing this breaks dataset reproducibility.
  Rng rng = Rng::substream(seed, index);
  SampleDraw d;
  d.c = rng.uniform(0.0, 5.0);
  d.init_kind = static_cast<InitKind>(rng.uniform_int(0, 2));
  d.boundary_kind = static_cast<BoundaryKind>(rng.uniform_int(0, 2));
  d.boundary = gen_boundary(rng, d.boundary_kind, config.grid);
  auto [u0, v0] = gen_initial_condition(rng, d.init_kind, config.grid);
  d.u0 = smooth_and_mask(u0, d.boundary, config.smooth_d0, config.blur_sigma);
  d.v0 = smooth_and_mask(v0, d.boundary, config.smooth_d0, config.blur_sigma);
  return d;
}

Trajectory simulate_sample(uint64_t seed, uint64_t index, const WaveConfig& config) {
  SampleDraw d = draw_sample(seed, index, config);
  WaveTrajectory traj = integrate(d.u0, d.v0, &d.boundary, d.c, config.n_record,
                                  config.dt_record, config.substeps);
  Trajectory out = assemble_states(traj);
  out.seed = index;
  return out;
}

namespace {

struct SamplePartial {
  double sum_u = 0, sumsq_u = 0, sum_v = 0, sumsq_v = 0;
};

SamplePartial accumulate(const WaveTrajectory& traj) {
  SamplePartial p;
  for (const Grid2D& g : traj.u)
    for (double x : g.a) {
      p.sum_u += x;
      p.sumsq_u += x * x;
    }
  for (const Grid2D& g : traj.v)
    for (double x : g.a) {
      p.sum_v += x;
      p.sumsq_v += x * x;
    }
  return p;
}

void run_striped(int n_samples, int threads, const std::function<void(int)>& body) {
  if (threads <= 1) {
    for (int i = 0; i < n_samples; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&, w]() {
      try {
        for (int i = w; i < n_samples; i += threads) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

DatasetMeta generate_dataset(int n_samples, uint64_t seed, const std::string& out_dir,
                             const WaveConfig& config, int threads) {
  if (n_samples < 1) throw ValidationError("generate_dataset: need at least one sample");
  if (threads < 1) throw ValidationError("generate_dataset: threads must be positive");
  if (config.grid < 8) throw ValidationError("generate_dataset: grid too small");
  std::filesystem::create_directories(out_dir);

  // Pass 1: per-sample moment sums, reduced in index order so the stats are
  // identical for any thread count.
  std::vector<SamplePartial> partials(n_samples);
  run_striped(n_samples, threads, [&](int i) {
    SampleDraw d = draw_sample(seed, i, config);
    WaveTrajectory traj = integrate(d.u0, d.v0, &d.boundary, d.c, config.n_record,
                                    config.dt_record, config.substeps);
    partials[i] = accumulate(traj);
  });
  double sum_u = 0, sumsq_u = 0, sum_v = 0, sumsq_v = 0;
  for (const SamplePartial& p : partials) {
    sum_u += p.sum_u;
    sumsq_u += p.sumsq_u;
    sum_v += p.sum_v;
    sumsq_v += p.sumsq_v;
  }
  const double count = static_cast<double>(n_samples) * config.n_record * config.grid *
                       config.grid;
  const double mean_u = sum_u / count;
  const double mean_v = sum_v / count;
  const double std_u = std::sqrt(std::max(0.0, sumsq_u / count - mean_u * mean_u));
  const double std_v = std::sqrt(std::max(0.0, sumsq_v / count - mean_v * mean_v));

  DatasetMeta meta;
  meta.stats.mean = {mean_u, mean_u, mean_v};
  meta.stats.std = {std_u, std_u, std_v};
  meta.seed = seed;
  meta.dt_record = config.dt_record;

  // Pass 2: regenerate (deterministic), normalize, write.
  run_striped(n_samples, threads, [&](int i) {
    Trajectory traj = simulate_sample(seed, i, config);
    for (FlowState& s : traj.states) normalize_in_place(s, meta.stats);
    write_fldt((std::filesystem::path(out_dir) / sample_file_name(i)).string(), traj);
  });
  write_dataset_sidecar(out_dir, meta);
  return meta;
}

}  // namespace flowcast::wave
