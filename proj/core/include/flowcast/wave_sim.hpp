#pragma once

#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowcast/field.hpp"
#include "flowcast/rng.hpp"
#include "flowcast/trajectory_io.hpp"

namespace flowcast::wave {

/// Square scalar field. Integration runs in double precision regardless of
/// the model Real type; states are cast on assembly.
struct Grid2D {
  int size = 0;
  std::vector<double> a;

  Grid2D() = default;
  explicit Grid2D(int n) : size(n), a(static_cast<size_t>(n) * n, 0.0) {}

  double& at(int y, int x) { return a[static_cast<size_t>(y) * size + x]; }
  double at(int y, int x) const { return a[static_cast<size_t>(y) * size + x]; }
};

enum class InitKind { pulses, plane_waves, mixed };
enum class BoundaryKind { rect, ellipse, hull };

struct WaveConfig {
  int grid = 100;
  int n_record = 20;
  double dt_record = 0.05;
  int substeps = 5;
  double smooth_d0 = 5.0;   // distance ramp length, cells
  double blur_sigma = 1.0;  // Gaussian blur sigma, cells
};

// Deterministic building blocks, exposed for direct use in tests.
Grid2D gaussian_pulse(int grid, double cx, double cy, double sigma, double amplitude);
Grid2D plane_wave(int grid, double angle, double wavelength, double phase, double amplitude);
BoundaryMask rect_mask(int grid, int x0, int y0, int x1, int y1);
BoundaryMask ellipse_mask(int grid, double cx, double cy, double semi_a, double semi_b,
                          double theta);
BoundaryMask hull_mask(int grid, std::span<const std::array<double, 2>> points);
std::vector<std::array<double, 2>> convex_hull(std::vector<std::array<double, 2>> points);

/// Random initial displacement and velocity fields (drawn independently,
/// in that order, from the same stream).
std::pair<Grid2D, Grid2D> gen_initial_condition(Rng& rng, InitKind kind, int grid);

/// Random interior region; mask true outside it. Degenerate draws
/// (< 4 interior cells) are resampled a bounded number of times.
BoundaryMask gen_boundary(Rng& rng, BoundaryKind kind, int grid);

/// Zero the exterior, ramp interior values by min(1, d/d0) with d the
/// Chebyshev distance to the nearest exterior cell, Gaussian-blur, then
/// re-zero the exterior.
Grid2D smooth_and_mask(const Grid2D& field, const BoundaryMask& boundary, double d0 = 5.0,
                       double sigma = 1.0);

/// 5-point stencil on unit spacing; border cells 0.
Grid2D laplacian(const Grid2D& f);

/// du/dt = v, dv/dt = c * erf(0.1/c * (laplacian(u) - v)); c == 0 gives
/// zero acceleration (the limit of the expression).
void wave_rhs(const Grid2D& u, const Grid2D& v, double c, Grid2D& du_dt, Grid2D& dv_dt);

/// One classic RK4 step of size h. Derivatives are zeroed on masked cells
/// at every stage so pinned cells never move mid-step, and the state is
/// re-pinned afterwards.
void rk4_step(Grid2D& u, Grid2D& v, double c, double h, const BoundaryMask* boundary);

struct WaveTrajectory {
  std::vector<Grid2D> u;
  std::vector<Grid2D> v;
  double c = 0.0;
};

/// Record n_record states (state 0 is the initial condition), stepping
/// substeps internal RK4 steps of h = dt_record/substeps between records.
/// Throws on non-finite intermediate values, naming the step.
WaveTrajectory integrate(const Grid2D& u0, const Grid2D& v0, const BoundaryMask* boundary,
                         double c, int n_record = 20, double dt_record = 0.05, int substeps = 5);

/// State assembly: channels (u, u, du/dt). The displacement is duplicated
/// so states carry three channels like the fluid data.
Trajectory assemble_states(const WaveTrajectory& traj);

/// Everything drawn for one sample, exposed so generation can be replayed
/// deterministically from (seed, index).
struct SampleDraw {
  double c = 0.0;
  InitKind init_kind = InitKind::pulses;
  BoundaryKind boundary_kind = BoundaryKind::rect;
  BoundaryMask boundary;
  Grid2D u0, v0;  // already smoothed and masked
};

SampleDraw draw_sample(uint64_t seed, uint64_t index, const WaveConfig& config);
Trajectory simulate_sample(uint64_t seed, uint64_t index, const WaveConfig& config);

/// Generate n_samples trajectories into out_dir (sample_%06d.fldt), states
/// stored normalized, stats sidecar written beside them. Deterministic in
/// (n_samples, seed, config) regardless of thread count.
DatasetMeta generate_dataset(int n_samples, uint64_t seed, const std::string& out_dir,
                             const WaveConfig& config = {}, int threads = 1);

}  // namespace flowcast::wave
