#pragma once

#include <cmath>
#include <cstdint>

namespace flowcast {

/// Counter-based deterministic generator (SplitMix64). The state is a
/// counter advanced by a fixed odd constant and passed through the
/// SplitMix64 finalizer, so every draw is a pure function of
/// (seed, stream, draw index) and files generated from it are reproducible
/// across platforms and worker counts.
///
/// Substream derivation: stream k of seed s starts from
///   mix(mix(s) ^ (0x9E3779B97F4A7C15 * (k + 1))).
class Rng {
public:
  explicit Rng(uint64_t seed) : state_(mix(seed)) {}

  static Rng substream(uint64_t seed, uint64_t stream) {
    Rng r(0);
    r.state_ = mix(mix(seed) ^ (kGamma * (stream + 1)));
    return r;
  }

  uint64_t next_u64() {
    state_ += kGamma;
    return mix(state_);
  }

  /// Uniform double in [0, 1), 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  /// Standard normal via Box-Muller; second value cached.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  static uint64_t mix(uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
  }

private:
  static constexpr uint64_t kGamma = 0x9E3779B97F4A7C15ull;

  uint64_t state_ = 0;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace flowcast
