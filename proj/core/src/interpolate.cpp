#include "flowcast/field.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace flowcast {

namespace {

double cross2(double ax, double ay, double bx, double by) {
  return ax * by - ay * bx;
}

void validate_mesh(const IrregularMesh& mesh) {
  if (mesh.triangles.empty())
    throw ValidationError("interpolate_mesh_to_grid: no triangles");
  if (mesh.node_count() < 3)
    throw ValidationError("interpolate_mesh_to_grid: mesh has fewer than 3 nodes");
  for (double v : mesh.node_values)
    if (!std::isfinite(v))
      throw ValidationError("interpolate_mesh_to_grid: non-finite input");
  const int n = mesh.node_count();
  for (const auto& tri : mesh.triangles) {
    for (int k = 0; k < 3; ++k)
      if (tri[static_cast<size_t>(k)] < 0 || tri[static_cast<size_t>(k)] >= n)
        throw ValidationError("interpolate_mesh_to_grid: triangle index out of range");
  }
}

}  // namespace

FlowState interpolate_mesh_to_grid(const IrregularMesh& mesh, const GridSpec& spec) {
  validate_mesh(mesh);
  if (spec.p_x < 1 || spec.p_y < 1)
    throw ValidationError("interpolate_mesh_to_grid: grid dims must be >= 1");
  if (!(spec.bbox.x_max > spec.bbox.x_min) || !(spec.bbox.y_max > spec.bbox.y_min))
    throw ValidationError("interpolate_mesh_to_grid: bbox must have positive extent");

  const int C = mesh.channels;
  const double dx = spec.p_x > 1 ? (spec.bbox.x_max - spec.bbox.x_min) / (spec.p_x - 1) : 0.0;
  const double dy = spec.p_y > 1 ? (spec.bbox.y_max - spec.bbox.y_min) / (spec.p_y - 1) : 0.0;

  FlowState out(spec.p_x, spec.p_y, C);
  out.cell_size = static_cast<Real>(dx > 0 ? dx : dy);
  std::vector<uint8_t> covered(static_cast<size_t>(spec.p_x) * spec.p_y, 0);

  // Forward pass: rasterize each triangle's grid-aligned bounding box and
  // fill covered points with barycentric-weighted node values. Triangles
  // are visited in input order and already-covered points are skipped, so
  // the result does not depend on how shared-edge points tie-break.
  const double edge_eps = 1e-12;
  for (const auto& tri : mesh.triangles) {
    const auto& pa = mesh.node_positions[static_cast<size_t>(tri[0])];
    const auto& pb = mesh.node_positions[static_cast<size_t>(tri[1])];
    const auto& pc = mesh.node_positions[static_cast<size_t>(tri[2])];
    const double area2 = cross2(pb[0] - pa[0], pb[1] - pa[1], pc[0] - pa[0], pc[1] - pa[1]);
    if (std::abs(area2) < 1e-30)
      throw ValidationError("interpolate_mesh_to_grid: degenerate triangle");

    const double tx_min = std::min({pa[0], pb[0], pc[0]});
    const double tx_max = std::max({pa[0], pb[0], pc[0]});
    const double ty_min = std::min({pa[1], pb[1], pc[1]});
    const double ty_max = std::max({pa[1], pb[1], pc[1]});

    int ix0 = 0, ix1 = spec.p_x - 1, iy0 = 0, iy1 = spec.p_y - 1;
    if (dx > 0) {
      ix0 = std::max(0, static_cast<int>(std::ceil((tx_min - spec.bbox.x_min) / dx - 1e-9)));
      ix1 = std::min(spec.p_x - 1, static_cast<int>(std::floor((tx_max - spec.bbox.x_min) / dx + 1e-9)));
    } else if (tx_min > spec.bbox.x_min || tx_max < spec.bbox.x_min) {
      // single-column grid at x_min: triangle must straddle it
      if (!(tx_min <= spec.bbox.x_min && spec.bbox.x_min <= tx_max)) continue;
    }
    if (dy > 0) {
      iy0 = std::max(0, static_cast<int>(std::ceil((ty_min - spec.bbox.y_min) / dy - 1e-9)));
      iy1 = std::min(spec.p_y - 1, static_cast<int>(std::floor((ty_max - spec.bbox.y_min) / dy + 1e-9)));
    }

    for (int iy = iy0; iy <= iy1; ++iy) {
      const double py = spec.bbox.y_min + iy * dy;
      for (int ix = ix0; ix <= ix1; ++ix) {
        const size_t cell = static_cast<size_t>(iy) * spec.p_x + ix;
        if (covered[cell]) continue;
        const double px = spec.bbox.x_min + ix * dx;
        // signed sub-areas; all same-signed as area2 means inside
        const double wa = cross2(pb[0] - px, pb[1] - py, pc[0] - px, pc[1] - py) / area2;
        const double wb = cross2(pc[0] - px, pc[1] - py, pa[0] - px, pa[1] - py) / area2;
        const double wc = cross2(pa[0] - px, pa[1] - py, pb[0] - px, pb[1] - py) / area2;
        if (wa < -edge_eps || wb < -edge_eps || wc < -edge_eps) continue;
        covered[cell] = 1;
        for (int c = 0; c < C; ++c) {
          const double v = wa * mesh.value(tri[0], c) + wb * mesh.value(tri[1], c) +
                           wc * mesh.value(tri[2], c);
          out.at(iy, ix, c) = static_cast<Real>(v);
        }
      }
    }
  }

  // Fill rule for points outside the triangulation: nearest node, ties to
  // the lowest node index.
  for (int iy = 0; iy < spec.p_y; ++iy) {
    for (int ix = 0; ix < spec.p_x; ++ix) {
      const size_t cell = static_cast<size_t>(iy) * spec.p_x + ix;
      if (covered[cell]) continue;
      const double px = spec.bbox.x_min + ix * dx;
      const double py = spec.bbox.y_min + iy * dy;
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int n = 0; n < mesh.node_count(); ++n) {
        const double ex = mesh.node_positions[static_cast<size_t>(n)][0] - px;
        const double ey = mesh.node_positions[static_cast<size_t>(n)][1] - py;
        const double d = ex * ex + ey * ey;
        if (d < best_d) {
          best_d = d;
          best = n;
        }
      }
      for (int c = 0; c < C; ++c)
        out.at(iy, ix, c) = static_cast<Real>(mesh.value(best, c));
    }
  }
  return out;
}

IrregularMesh crop_mesh(const IrregularMesh& mesh, const BBox& bbox) {
  if (!(bbox.x_min <= bbox.x_max) || !(bbox.y_min <= bbox.y_max))
    throw ValidationError("crop_mesh: bbox not well-ordered");

  IrregularMesh out;
  out.channels = mesh.channels;
  std::vector<int> remap(static_cast<size_t>(mesh.node_count()), -1);
  for (int n = 0; n < mesh.node_count(); ++n) {
    const auto& p = mesh.node_positions[static_cast<size_t>(n)];
    if (p[0] < bbox.x_min || p[0] > bbox.x_max || p[1] < bbox.y_min || p[1] > bbox.y_max)
      continue;
    remap[static_cast<size_t>(n)] = out.node_count();
    out.node_positions.push_back(p);
    for (int c = 0; c < mesh.channels; ++c)
      out.node_values.push_back(mesh.value(n, c));
  }
  if (out.node_count() < 3)
    throw ValidationError("crop_mesh: crop leaves fewer than 3 nodes");

  for (const auto& tri : mesh.triangles) {
    const int a = remap[static_cast<size_t>(tri[0])];
    const int b = remap[static_cast<size_t>(tri[1])];
    const int c = remap[static_cast<size_t>(tri[2])];
    if (a >= 0 && b >= 0 && c >= 0)
      out.triangles.push_back({a, b, c});
  }
  return out;
}

}  // namespace flowcast
