#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "flowcast/tensor.hpp"

namespace flowcast {

/// One timestep of a flow field on a regular grid.
///
/// Geometry convention used throughout: x is the column index, y the row
/// index, origin at the bounding box (x_min, y_min). Storage is row-major
/// with channels last: values[(y * width + x) * channels + c].
struct FlowState {
  int width = 0;              // p_x, number of columns
  int height = 0;             // p_y, number of rows
  int channels = 0;           // C
  std::vector<Real> values;   // height * width * channels
  std::vector<std::string> channel_names;
  Real cell_size = Real(1);

  FlowState() = default;
  FlowState(int p_x, int p_y, int c)
      : width(p_x), height(p_y), channels(c),
        values(static_cast<size_t>(p_x) * p_y * c, Real(0)) {}

  Real& at(int y, int x, int c) {
    return values[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  Real at(int y, int x, int c) const {
    return values[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  int64_t cell_count() const { return static_cast<int64_t>(width) * height; }
  int64_t value_count() const { return cell_count() * channels; }
  bool shape_equals(const FlowState& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

/// Ordered sequence of states plus sample metadata.
struct Trajectory {
  std::vector<FlowState> states;
  // PDE constant of the generating equation; NaN when inapplicable.
  Real pde_constant = std::numeric_limits<Real>::quiet_NaN();
  uint64_t seed = 0;
};

/// Boundary/exterior cells to be pinned. mask true = pinned cell.
struct BoundaryMask {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> mask;        // height * width, row-major
  std::vector<Real> pinned_value;   // per channel

  BoundaryMask() = default;
  BoundaryMask(int p_x, int p_y, int channels)
      : width(p_x), height(p_y),
        mask(static_cast<size_t>(p_x) * p_y, 0),
        pinned_value(static_cast<size_t>(channels), Real(0)) {}

  bool at(int y, int x) const {
    return mask[static_cast<size_t>(y) * width + x] != 0;
  }
  void set(int y, int x, bool v) {
    mask[static_cast<size_t>(y) * width + x] = v ? 1 : 0;
  }
  int64_t interior_count() const {
    int64_t n = 0;
    for (uint8_t m : mask) n += (m == 0);
    return n;
  }
};

/// Per-channel normalization statistics (population variance convention:
/// divide by count, not count-1).
struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;
};

/// Triangulated scattered data. Triangulations are inputs, never generated
/// here.
struct IrregularMesh {
  std::vector<std::array<double, 2>> node_positions;   // (x, y)
  std::vector<double> node_values;                     // node-major, C per node
  int channels = 0;
  std::vector<std::array<int, 3>> triangles;

  int node_count() const { return static_cast<int>(node_positions.size()); }
  double value(int node, int c) const {
    return node_values[static_cast<size_t>(node) * channels + c];
  }
};

struct BBox {
  double x_min = 0, x_max = 0, y_min = 0, y_max = 0;
};

struct GridSpec {
  int p_x = 0;
  int p_y = 0;
  BBox bbox;
};

/// Barycentric interpolation of a triangulated mesh onto a regular grid.
/// Grid points sample the bbox inclusively: x_i = x_min + i * dx with
/// dx = (x_max - x_min) / (p_x - 1). Points outside every triangle take the
/// nearest node's value.
FlowState interpolate_mesh_to_grid(const IrregularMesh& mesh, const GridSpec& spec);

/// Drop nodes outside bbox, drop triangles touching dropped nodes, remap
/// indices. Throws if fewer than 3 nodes survive.
IrregularMesh crop_mesh(const IrregularMesh& mesh, const BBox& bbox);

/// Pin masked cells to the mask's per-channel value. Pure; returns a copy.
FlowState apply_boundary(const FlowState& state, const BoundaryMask& mask);
void apply_boundary_in_place(FlowState& state, const BoundaryMask& mask);

NormStats compute_stats(std::span<const Trajectory> trajectories);
FlowState normalize(const FlowState& state, const NormStats& stats);
FlowState denormalize(const FlowState& state, const NormStats& stats);
void normalize_in_place(FlowState& state, const NormStats& stats);
void denormalize_in_place(FlowState& state, const NormStats& stats);

}  // namespace flowcast
