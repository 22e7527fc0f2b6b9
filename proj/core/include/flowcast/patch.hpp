#pragma once

#include <utility>
#include <vector>

#include "flowcast/field.hpp"
#include "flowcast/tensor.hpp"

namespace flowcast {

inline constexpr int kPatch = 16;

/// Patch enumeration order: which patch-grid axis varies fastest.
enum class PatchOrder { x_major, y_major };

int patch_count(int p_x, int p_y);

/// Patch-grid coordinates (x index, y index) for each patch, in sequence
/// order.
std::vector<std::pair<int, int>> patch_coords(int p_x, int p_y, PatchOrder order);

/// (p_y, p_x, C) grid tensor -> (N, 16, 16, C) patch tensor.
Tensor patchify_grid(const Tensor& grid, PatchOrder order);
/// Exact inverse of patchify_grid.
Tensor assemble_grid(const Tensor& patches, int p_x, int p_y, PatchOrder order);

/// FlowState wrappers; channel names and cell size survive the round trip.
Tensor patchify(const FlowState& state, PatchOrder order);
FlowState unpatchify(const Tensor& patches, int p_x, int p_y, PatchOrder order,
                     std::vector<std::string> channel_names = {},
                     Real cell_size = Real(1));

}  // namespace flowcast
