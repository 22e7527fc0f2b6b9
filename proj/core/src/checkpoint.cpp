#include "flowcast/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

namespace flowcast {

namespace {

constexpr char kMagic[4] = {'F', 'L', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw RuntimeFailure("checkpoint: truncated file");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_f32_block(std::ostream& os, const Real* data, int64_t n) {
  std::vector<unsigned char> buf(static_cast<size_t>(n) * 4);
  for (int64_t i = 0; i < n; ++i) {
    const float v = static_cast<float>(data[i]);
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    buf[static_cast<size_t>(i) * 4 + 0] = static_cast<unsigned char>(bits);
    buf[static_cast<size_t>(i) * 4 + 1] = static_cast<unsigned char>(bits >> 8);
    buf[static_cast<size_t>(i) * 4 + 2] = static_cast<unsigned char>(bits >> 16);
    buf[static_cast<size_t>(i) * 4 + 3] = static_cast<unsigned char>(bits >> 24);
  }
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size()));
}

void get_f32_block(std::istream& is, Real* data, int64_t n) {
  std::vector<unsigned char> buf(static_cast<size_t>(n) * 4);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!is) throw RuntimeFailure("checkpoint: truncated tensor data");
  for (int64_t i = 0; i < n; ++i) {
    const uint32_t bits = static_cast<uint32_t>(buf[static_cast<size_t>(i) * 4 + 0]) |
                          (static_cast<uint32_t>(buf[static_cast<size_t>(i) * 4 + 1]) << 8) |
                          (static_cast<uint32_t>(buf[static_cast<size_t>(i) * 4 + 2]) << 16) |
                          (static_cast<uint32_t>(buf[static_cast<size_t>(i) * 4 + 3]) << 24);
    float v;
    std::memcpy(&v, &bits, 4);
    data[i] = static_cast<Real>(v);
  }
}

}  // namespace

void write_flck(const std::string& path, const std::vector<NamedTensor>& tensors,
                const std::string& config_json) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeFailure("checkpoint: cannot open '" + path + "' for writing");
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<uint32_t>(tensors.size()));
  for (const NamedTensor& nt : tensors) {
    put_u32(os, static_cast<uint32_t>(nt.name.size()));
    os.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
    put_u32(os, static_cast<uint32_t>(nt.tensor.rank()));
    for (int i = 0; i < nt.tensor.rank(); ++i)
      put_u32(os, static_cast<uint32_t>(nt.tensor.dim(i)));
    put_f32_block(os, nt.tensor.data(), nt.tensor.size());
  }
  put_u32(os, static_cast<uint32_t>(config_json.size()));
  os.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
  if (!os) throw RuntimeFailure("checkpoint: write failed for '" + path + "'");
}

std::pair<std::vector<NamedTensor>, std::string> read_flck(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeFailure("checkpoint: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw ValidationError("checkpoint: bad magic in '" + path + "'");
  if (get_u32(is) != kVersion)
    throw ValidationError("checkpoint: unsupported version in '" + path + "'");
  const uint32_t count = get_u32(is);
  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (uint32_t t = 0; t < count; ++t) {
    const uint32_t name_len = get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t rank = get_u32(is);
    if (rank > 4) throw ValidationError("checkpoint: tensor rank " + std::to_string(rank) +
                                        " unsupported");
    std::vector<int> dims(rank);
    for (uint32_t i = 0; i < rank; ++i) dims[i] = static_cast<int>(get_u32(is));
    Tensor tensor(dims);
    get_f32_block(is, tensor.data(), tensor.size());
    tensors.push_back({std::move(name), std::move(tensor)});
  }
  const uint32_t json_len = get_u32(is);
  std::string config(json_len, '\0');
  is.read(config.data(), json_len);
  if (!is) throw RuntimeFailure("checkpoint: truncated config blob in '" + path + "'");
  return {std::move(tensors), std::move(config)};
}

void write_checkpoint(const std::string& path, Model& model) {
  std::vector<NamedTensor> tensors;
  for (nn::Param* p : model.params()) tensors.push_back({p->name, p->value});
  write_flck(path, tensors, model.cfg.to_json());
}

Model read_checkpoint(const std::string& path) {
  auto [tensors, config] = read_flck(path);
  Model model(ModelConfig::from_json(config));
  std::map<std::string, Tensor*> by_name;
  for (NamedTensor& nt : tensors) by_name[nt.name] = &nt.tensor;
  std::string missing, mismatched;
  std::set<std::string> used;
  for (nn::Param* p : model.params()) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) {
      missing += (missing.empty() ? "" : ", ") + p->name;
      continue;
    }
    used.insert(p->name);
    if (it->second->shape() != p->value.shape()) {
      mismatched += (mismatched.empty() ? "" : ", ") + p->name;
      continue;
    }
    p->value = *it->second;
  }
  std::string extra;
  for (const NamedTensor& nt : tensors)
    if (!used.count(nt.name)) extra += (extra.empty() ? "" : ", ") + nt.name;
  if (!missing.empty() || !mismatched.empty() || !extra.empty()) {
    std::string msg = "checkpoint: tensor mismatch in '" + path + "'";
    if (!missing.empty()) msg += "; missing: " + missing;
    if (!mismatched.empty()) msg += "; shape mismatch: " + mismatched;
    if (!extra.empty()) msg += "; unexpected: " + extra;
    throw ValidationError(msg);
  }
  return model;
}

}  // namespace flowcast
