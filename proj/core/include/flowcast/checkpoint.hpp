#pragma once

#include <string>
#include <utility>
#include <vector>

#include "flowcast/model.hpp"

namespace flowcast {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// FLCK container: magic "FLCK", version u32 = 1, tensor count u32, then per
/// tensor name length u32 + name, rank u32, dims u32[rank], f32 data
/// row-major; a length-prefixed JSON blob trails the tensors. Little-endian
/// throughout.
void write_flck(const std::string& path, const std::vector<NamedTensor>& tensors,
                const std::string& config_json);
std::pair<std::vector<NamedTensor>, std::string> read_flck(const std::string& path);

/// Model wrappers: tensor names are the parameter names, the JSON blob is
/// the model config.
void write_checkpoint(const std::string& path, Model& model);
Model read_checkpoint(const std::string& path);

}  // namespace flowcast
