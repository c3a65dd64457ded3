#pragma once

#include <cmath>
#include <cstdint>

namespace mvlab {

/// splitmix64 finalizer: bijective 64-bit mix with good avalanche.
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Counter-based splittable generator. Output i of a stream is
/// mix64(key + i * GAMMA) with the key derived by hashing (seed, stream), so
/// every (seed, replicate) pair gets an independent reproducible stream and
/// replicates can run in any order or thread without sharing state.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream)
      : key_(mix64(mix64(seed + kGamma) ^ (kGamma * (stream + 1)))) {}

  std::uint64_t next_u64() { return mix64(key_ + (++counter_) * kGamma); }

  /// Uniform in [0, 1) with 53 random bits.
  double next_u01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal via Marsaglia polar; the spare deviate is cached.
  double next_normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * next_u01() - 1.0;
      v = 2.0 * next_u01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

 private:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
  std::uint64_t key_;
  std::uint64_t counter_{0};
  double spare_{0.0};
  bool has_spare_{false};
};

}  // namespace mvlab
