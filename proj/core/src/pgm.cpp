#include "flowcast/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace flowcast {

namespace {

void write_p5(const std::string& path, const std::vector<uint8_t>& pixels, int width,
              int height) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeFailure("cannot open image '" + path + "'");
  os << "P5\n" << width << " " << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()),
           static_cast<std::streamsize>(pixels.size()));
  if (!os) throw RuntimeFailure("write failed for image '" + path + "'");
}

void check_plane(const std::vector<double>& plane, int width, int height) {
  if (width < 1 || height < 1)
    throw ValidationError("image dimensions must be positive");
  if (plane.size() != static_cast<size_t>(width) * static_cast<size_t>(height))
    throw ValidationError("plane size does not match image dimensions");
}

}  // namespace

std::vector<double> channel_plane(const FlowState& s, int channel) {
  if (channel < 0 || channel >= s.channels)
    throw ValidationError("channel " + std::to_string(channel) + " out of range");
  std::vector<double> plane(static_cast<size_t>(s.cell_count()));
  for (int64_t i = 0; i < s.cell_count(); ++i)
    plane[static_cast<size_t>(i)] =
        static_cast<double>(s.values[static_cast<size_t>(i * s.channels + channel)]);
  return plane;
}

GrayRange write_pgm(const std::string& path, const std::vector<double>& plane,
                    int width, int height) {
  check_plane(plane, width, height);
  const auto [lo_it, hi_it] = std::minmax_element(plane.begin(), plane.end());
  GrayRange r{*lo_it, *hi_it};
  std::vector<uint8_t> px(plane.size());
  if (r.hi > r.lo) {
    const double scale = 255.0 / (r.hi - r.lo);
    for (size_t i = 0; i < plane.size(); ++i)
      px[i] = static_cast<uint8_t>(std::lround((plane[i] - r.lo) * scale));
  } else {
    std::fill(px.begin(), px.end(), uint8_t{128});
  }
  write_p5(path, px, width, height);
  return r;
}

GrayRange write_pgm_diff(const std::string& path, const std::vector<double>& a,
                         const std::vector<double>& b, int width, int height) {
  check_plane(a, width, height);
  if (a.size() != b.size()) throw ValidationError("diff planes differ in size");
  std::vector<double> d(a.size());
  for (size_t i = 0; i < a.size(); ++i) d[i] = std::abs(a[i] - b[i]);
  GrayRange r{0.0, *std::max_element(d.begin(), d.end())};
  std::vector<uint8_t> px(d.size(), 0);
  if (r.hi > 0) {
    const double scale = 255.0 / r.hi;
    for (size_t i = 0; i < d.size(); ++i)
      px[i] = static_cast<uint8_t>(std::lround(d[i] * scale));
  }
  write_p5(path, px, width, height);
  return r;
}

GrayImage read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open image '" + path + "'");
  std::string magic;
  is >> magic;
  if (magic != "P5") throw ValidationError("'" + path + "' is not a P5 PGM");
  int width = 0, height = 0, maxval = 0;
  is >> width >> height >> maxval;
  if (!is || width < 1 || height < 1 || maxval != 255)
    throw ValidationError("unsupported PGM header in '" + path + "'");
  is.get();  // single whitespace byte before the raster
  GrayImage img;
  img.width = width;
  img.height = height;
  img.pixels.resize(static_cast<size_t>(width) * static_cast<size_t>(height));
  is.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!is) throw ValidationError("truncated PGM raster in '" + path + "'");
  return img;
}

}  // namespace flowcast
