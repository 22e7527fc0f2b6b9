#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowcast/field.hpp"

namespace flowcast {

struct GrayImage {
  int width = 0, height = 0;
  std::vector<uint8_t> pixels;  // row-major

  uint8_t at(int y, int x) const {
    return pixels[static_cast<size_t>(y) * static_cast<size_t>(width) +
                  static_cast<size_t>(x)];
  }
};

/// Value range a plane was mapped through.
struct GrayRange {
  double lo = 0, hi = 0;
};

/// One channel of a state as a row-major plane of doubles.
std::vector<double> channel_plane(const FlowState& s, int channel);

/// Binary PGM (P5, maxval 255), gray = round(255 * (v - min) / (max - min)).
/// A constant plane maps to mid gray. Returns the range used.
GrayRange write_pgm(const std::string& path, const std::vector<double>& plane,
                    int width, int height);

/// |a - b| mapped over [0, max|a - b|], so equal inputs come out black.
GrayRange write_pgm_diff(const std::string& path, const std::vector<double>& a,
                         const std::vector<double>& b, int width, int height);

GrayImage read_pgm(const std::string& path);

}  // namespace flowcast
