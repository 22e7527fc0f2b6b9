#pragma once

#include <string>
#include <vector>

#include "flowcast/field.hpp"

namespace flowcast {

/// FLDT trajectory container, little-endian:
///   magic "FLDT", version u32 = 1, T u32, C u32, p_y u32, p_x u32,
///   c f32 (PDE constant, NaN when inapplicable),
///   then T*C*p_y*p_x f32 values, t-major, then channel, then row-major.
void write_fldt(const std::string& path, const Trajectory& traj);
Trajectory read_fldt(const std::string& path);

/// Dataset-level sidecar: {"mean": [...], "std": [...], "seed": n,
/// "dt_record": 0.05}, stored as stats.json inside the dataset directory.
struct DatasetMeta {
  NormStats stats;
  uint64_t seed = 0;
  double dt_record = 0.05;
};

void write_dataset_sidecar(const std::string& dir, const DatasetMeta& meta);
DatasetMeta read_dataset_sidecar(const std::string& dir);

std::string sample_file_name(int index);

/// All sample_*.fldt files of a dataset directory, in index order, plus the
/// sidecar.
struct Dataset {
  std::vector<Trajectory> samples;
  DatasetMeta meta;
};

Dataset load_dataset(const std::string& dir);

}  // namespace flowcast
