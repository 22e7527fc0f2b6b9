#include "flowcast/patch.hpp"

#include <cstring>
#include <string>

namespace flowcast {

namespace {

void check_divisible(int p_x, int p_y) {
  if (p_x <= 0 || p_y <= 0)
    throw ValidationError("patchify: grid " + std::to_string(p_x) + "x" +
                          std::to_string(p_y) + " is empty");
  if (p_x % kPatch != 0)
    throw ValidationError("patchify: grid width " + std::to_string(p_x) +
                          " not divisible by " + std::to_string(kPatch));
  if (p_y % kPatch != 0)
    throw ValidationError("patchify: grid height " + std::to_string(p_y) +
                          " not divisible by " + std::to_string(kPatch));
}

}  // namespace

int patch_count(int p_x, int p_y) {
  check_divisible(p_x, p_y);
  return (p_x / kPatch) * (p_y / kPatch);
}

std::vector<std::pair<int, int>> patch_coords(int p_x, int p_y, PatchOrder order) {
  check_divisible(p_x, p_y);
  const int nx = p_x / kPatch, ny = p_y / kPatch;
  std::vector<std::pair<int, int>> coords;
  coords.reserve(static_cast<size_t>(nx) * ny);
  if (order == PatchOrder::x_major) {
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) coords.emplace_back(x, y);
  } else {
    for (int x = 0; x < nx; ++x)
      for (int y = 0; y < ny; ++y) coords.emplace_back(x, y);
  }
  return coords;
}

Tensor patchify_grid(const Tensor& grid, PatchOrder order) {
  if (grid.rank() != 3) throw ValidationError("patchify: expected rank-3 grid");
  const int p_y = grid.dim(0), p_x = grid.dim(1), c = grid.dim(2);
  check_divisible(p_x, p_y);
  const auto coords = patch_coords(p_x, p_y, order);
  const int n = static_cast<int>(coords.size());
  Tensor patches({n, kPatch, kPatch, c});
  const size_t row_bytes = static_cast<size_t>(kPatch) * c * sizeof(Real);
  for (int p = 0; p < n; ++p) {
    const int x0 = coords[p].first * kPatch, y0 = coords[p].second * kPatch;
    for (int py = 0; py < kPatch; ++py)
      std::memcpy(&patches(p, py, 0, 0), &grid(y0 + py, x0, 0), row_bytes);
  }
  return patches;
}

Tensor assemble_grid(const Tensor& patches, int p_x, int p_y, PatchOrder order) {
  if (patches.rank() != 4 || patches.dim(1) != kPatch || patches.dim(2) != kPatch)
    throw ValidationError("assemble_grid: expected (N, 16, 16, C) patches");
  check_divisible(p_x, p_y);
  const int c = patches.dim(3);
  const auto coords = patch_coords(p_x, p_y, order);
  if (patches.dim(0) != static_cast<int>(coords.size()))
    throw ValidationError("assemble_grid: patch count " + std::to_string(patches.dim(0)) +
                          " does not tile " + std::to_string(p_x) + "x" +
                          std::to_string(p_y));
  Tensor grid({p_y, p_x, c});
  const size_t row_bytes = static_cast<size_t>(kPatch) * c * sizeof(Real);
  for (int p = 0; p < patches.dim(0); ++p) {
    const int x0 = coords[p].first * kPatch, y0 = coords[p].second * kPatch;
    for (int py = 0; py < kPatch; ++py)
      std::memcpy(&grid(y0 + py, x0, 0), &patches(p, py, 0, 0), row_bytes);
  }
  return grid;
}

Tensor patchify(const FlowState& state, PatchOrder order) {
  Tensor grid({state.height, state.width, state.channels});
  std::memcpy(grid.data(), state.values.data(), state.values.size() * sizeof(Real));
  return patchify_grid(grid, order);
}

FlowState unpatchify(const Tensor& patches, int p_x, int p_y, PatchOrder order,
                     std::vector<std::string> channel_names, Real cell_size) {
  Tensor grid = assemble_grid(patches, p_x, p_y, order);
  FlowState s(p_x, p_y, grid.dim(2));
  std::memcpy(s.values.data(), grid.data(), s.values.size() * sizeof(Real));
  s.channel_names = std::move(channel_names);
  s.cell_size = cell_size;
  return s;
}

}  // namespace flowcast
