#include "flowcast/field.hpp"

#include <cmath>
#include <string>

namespace flowcast {

FlowState apply_boundary(const FlowState& state, const BoundaryMask& mask) {
  FlowState out = state;
  apply_boundary_in_place(out, mask);
  return out;
}

void apply_boundary_in_place(FlowState& state, const BoundaryMask& mask) {
  if (mask.width != state.width || mask.height != state.height)
    throw ValidationError("apply_boundary: mask shape " +
                          std::to_string(mask.width) + "x" + std::to_string(mask.height) +
                          " does not match state " +
                          std::to_string(state.width) + "x" + std::to_string(state.height));
  if (static_cast<int>(mask.pinned_value.size()) != state.channels)
    throw ValidationError("apply_boundary: pinned_value channel count mismatch");
  for (int y = 0; y < state.height; ++y)
    for (int x = 0; x < state.width; ++x)
      if (mask.at(y, x))
        for (int c = 0; c < state.channels; ++c)
          state.at(y, x, c) = mask.pinned_value[static_cast<size_t>(c)];
}

NormStats compute_stats(std::span<const Trajectory> trajectories) {
  if (trajectories.empty() || trajectories[0].states.empty())
    throw ValidationError("compute_stats: empty dataset");
  const int channels = trajectories[0].states[0].channels;

  std::vector<double> sum(static_cast<size_t>(channels), 0.0);
  std::vector<double> sum_sq(static_cast<size_t>(channels), 0.0);
  int64_t cells = 0;
  for (const Trajectory& traj : trajectories) {
    for (const FlowState& s : traj.states) {
      if (s.channels != channels)
        throw ValidationError("compute_stats: inconsistent channel count");
      for (int64_t i = 0; i < s.cell_count(); ++i) {
        for (int c = 0; c < channels; ++c) {
          const double v = s.values[static_cast<size_t>(i * channels + c)];
          sum[static_cast<size_t>(c)] += v;
          sum_sq[static_cast<size_t>(c)] += v * v;
        }
      }
      cells += s.cell_count();
    }
  }

  NormStats stats;
  stats.mean.resize(static_cast<size_t>(channels));
  stats.std.resize(static_cast<size_t>(channels));
  for (int c = 0; c < channels; ++c) {
    const double m = sum[static_cast<size_t>(c)] / static_cast<double>(cells);
    double var = sum_sq[static_cast<size_t>(c)] / static_cast<double>(cells) - m * m;
    if (var < 0.0) var = 0.0;  // roundoff guard
    stats.mean[static_cast<size_t>(c)] = m;
    stats.std[static_cast<size_t>(c)] = std::sqrt(var);
  }
  return stats;
}

namespace {

void check_stats(const FlowState& state, const NormStats& stats) {
  if (static_cast<int>(stats.mean.size()) != state.channels ||
      static_cast<int>(stats.std.size()) != state.channels)
    throw ValidationError("normalize: stats channel count mismatch");
  for (double s : stats.std)
    if (!(s > 0.0))
      throw ValidationError("normalize: degenerate channel (std == 0)");
}

}  // namespace

void normalize_in_place(FlowState& state, const NormStats& stats) {
  check_stats(state, stats);
  for (int64_t i = 0; i < state.cell_count(); ++i)
    for (int c = 0; c < state.channels; ++c) {
      Real& v = state.values[static_cast<size_t>(i * state.channels + c)];
      v = static_cast<Real>((static_cast<double>(v) - stats.mean[static_cast<size_t>(c)]) /
                            stats.std[static_cast<size_t>(c)]);
    }
}

void denormalize_in_place(FlowState& state, const NormStats& stats) {
  check_stats(state, stats);
  for (int64_t i = 0; i < state.cell_count(); ++i)
    for (int c = 0; c < state.channels; ++c) {
      Real& v = state.values[static_cast<size_t>(i * state.channels + c)];
      v = static_cast<Real>(static_cast<double>(v) * stats.std[static_cast<size_t>(c)] +
                            stats.mean[static_cast<size_t>(c)]);
    }
}

FlowState normalize(const FlowState& state, const NormStats& stats) {
  FlowState out = state;
  normalize_in_place(out, stats);
  return out;
}

FlowState denormalize(const FlowState& state, const NormStats& stats) {
  FlowState out = state;
  denormalize_in_place(out, stats);
  return out;
}

}  // namespace flowcast
