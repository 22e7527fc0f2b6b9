#include "flowcast/trajectory_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

namespace flowcast {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw RuntimeFailure("unexpected end of file: " + path);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

float get_f32(std::istream& is, const std::string& path) {
  const uint32_t bits = get_u32(is, path);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

void write_fldt(const std::string& path, const Trajectory& traj) {
  if (traj.states.empty())
    throw ValidationError("write_fldt: empty trajectory");
  const FlowState& first = traj.states[0];
  for (const FlowState& s : traj.states)
    if (!s.shape_equals(first))
      throw ValidationError("write_fldt: inconsistent state shapes");

  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeFailure("cannot open for writing: " + path);
  os.write("FLDT", 4);
  put_u32(os, 1);
  put_u32(os, static_cast<uint32_t>(traj.states.size()));
  put_u32(os, static_cast<uint32_t>(first.channels));
  put_u32(os, static_cast<uint32_t>(first.height));
  put_u32(os, static_cast<uint32_t>(first.width));
  put_f32(os, static_cast<float>(traj.pde_constant));

  std::vector<char> plane(static_cast<size_t>(first.cell_count()) * 4);
  for (const FlowState& s : traj.states) {
    for (int c = 0; c < s.channels; ++c) {
      char* p = plane.data();
      for (int y = 0; y < s.height; ++y) {
        for (int x = 0; x < s.width; ++x) {
          const float v = static_cast<float>(s.at(y, x, c));
          uint32_t bits;
          std::memcpy(&bits, &v, 4);
          p[0] = static_cast<char>(bits & 0xFF);
          p[1] = static_cast<char>((bits >> 8) & 0xFF);
          p[2] = static_cast<char>((bits >> 16) & 0xFF);
          p[3] = static_cast<char>((bits >> 24) & 0xFF);
          p += 4;
        }
      }
      os.write(plane.data(), static_cast<std::streamsize>(plane.size()));
    }
  }
  if (!os) throw RuntimeFailure("write failed: " + path);
}

Trajectory read_fldt(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeFailure("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "FLDT", 4) != 0)
    throw RuntimeFailure("not an FLDT file: " + path);
  const uint32_t version = get_u32(is, path);
  if (version != 1)
    throw RuntimeFailure("unsupported FLDT version " + std::to_string(version) + ": " + path);
  const uint32_t T = get_u32(is, path);
  const uint32_t C = get_u32(is, path);
  const uint32_t p_y = get_u32(is, path);
  const uint32_t p_x = get_u32(is, path);
  const float c_val = get_f32(is, path);

  Trajectory traj;
  traj.pde_constant = static_cast<Real>(c_val);
  traj.states.reserve(T);
  std::vector<char> plane(static_cast<size_t>(p_x) * p_y * 4);
  for (uint32_t t = 0; t < T; ++t) {
    FlowState s(static_cast<int>(p_x), static_cast<int>(p_y), static_cast<int>(C));
    for (uint32_t c = 0; c < C; ++c) {
      is.read(plane.data(), static_cast<std::streamsize>(plane.size()));
      if (!is) throw RuntimeFailure("unexpected end of file: " + path);
      const char* p = plane.data();
      for (uint32_t y = 0; y < p_y; ++y) {
        for (uint32_t x = 0; x < p_x; ++x) {
          uint32_t bits = static_cast<uint32_t>(static_cast<unsigned char>(p[0])) |
                          (static_cast<uint32_t>(static_cast<unsigned char>(p[1])) << 8) |
                          (static_cast<uint32_t>(static_cast<unsigned char>(p[2])) << 16) |
                          (static_cast<uint32_t>(static_cast<unsigned char>(p[3])) << 24);
          float v;
          std::memcpy(&v, &bits, 4);
          s.at(static_cast<int>(y), static_cast<int>(x), static_cast<int>(c)) = static_cast<Real>(v);
          p += 4;
        }
      }
    }
    traj.states.push_back(std::move(s));
  }
  return traj;
}

void write_dataset_sidecar(const std::string& dir, const DatasetMeta& meta) {
  nlohmann::json j;
  j["mean"] = meta.stats.mean;
  j["std"] = meta.stats.std;
  j["seed"] = meta.seed;
  j["dt_record"] = meta.dt_record;
  const std::string path = (std::filesystem::path(dir) / "stats.json").string();
  std::ofstream os(path);
  if (!os) throw RuntimeFailure("cannot open for writing: " + path);
  os << j.dump(2) << "\n";
  if (!os) throw RuntimeFailure("write failed: " + path);
}

DatasetMeta read_dataset_sidecar(const std::string& dir) {
  const std::string path = (std::filesystem::path(dir) / "stats.json").string();
  std::ifstream is(path);
  if (!is) throw RuntimeFailure("cannot open: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeFailure("malformed sidecar " + path + ": " + e.what());
  }
  DatasetMeta meta;
  meta.stats.mean = j.at("mean").get<std::vector<double>>();
  meta.stats.std = j.at("std").get<std::vector<double>>();
  meta.seed = j.at("seed").get<uint64_t>();
  meta.dt_record = j.at("dt_record").get<double>();
  return meta;
}

std::string sample_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%06d.fldt", index);
  return buf;
}

Dataset load_dataset(const std::string& dir) {
  if (!std::filesystem::is_directory(dir))
    throw RuntimeFailure("dataset directory not found: " + dir);
  Dataset ds;
  ds.meta = read_dataset_sidecar(dir);
  std::vector<std::string> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.starts_with("sample_") && name.ends_with(".fldt"))
      files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw RuntimeFailure("no sample_*.fldt files in " + dir);
  ds.samples.reserve(files.size());
  for (const std::string& f : files)
    ds.samples.push_back(read_fldt(f));
  return ds;
}

}  // namespace flowcast
