#pragma once

#include <cmath>
#include <vector>

#include "mvlab/errors.hpp"
#include "mvlab/rng.hpp"
#include "mvlab/stats.hpp"

namespace mvlab {

/// Closed forms for the total-mass process Z_t = <X_t, 1>, a Feller branching
/// diffusion dZ = sqrt(c Z) dW started at m. Independent of the spatial
/// motion, so these double as end-to-end oracles for the particle scheme.

inline double feller_variance(double c, double T, double m) { return c * T * m; }

inline double feller_extinction_probability(double c, double T, double m) {
  if (c * T <= 0.0) return m > 0.0 ? 0.0 : 1.0;
  return std::exp(-2.0 * m / (c * T));
}

inline double feller_laplace(double lambda, double c, double T, double m) {
  return std::exp(-m * lambda / (1.0 + 0.5 * c * lambda * T));
}

struct FellerMcResult {
  SampleStats mass;
  SampleStats laplace;
  double extinction_freq{0.0};
  double extinction_se{0.0};
  int replicates{0};
};

/// Absorbed Euler scheme for dZ = sqrt(c Z) dW: brute-force cross-check of
/// the closed forms above and of the particle simulator, sharing none of
/// their code paths.
inline FellerMcResult feller_mc(double c, double T, double m, double lambda, double dt,
                                int replicates, std::uint64_t seed, int threads = 1) {
  if (!(T > 0.0) || !(dt > 0.0)) throw InvalidParamsError("feller_mc: T, dt must be > 0");
  if (c < 0.0 || m < 0.0) throw InvalidParamsError("feller_mc: c, m must be >= 0");
  if (replicates < 1) throw InvalidParamsError("feller_mc: replicates must be >= 1");
  const auto n_steps = static_cast<long long>(std::llround(T / dt));
  if (n_steps < 1 || std::fabs(n_steps * dt - T) > 1e-9 * std::max(1.0, T))
    throw InvalidParamsError("feller_mc: T must be an integer multiple of dt");

  std::vector<double> finals = parallel_map(replicates, threads, [&](int r) {
    RngStream rng(seed, static_cast<std::uint64_t>(r));
    double z = m;
    for (long long s = 0; s < n_steps && z > 0.0; ++s) {
      z += std::sqrt(c * z * dt) * rng.next_normal();
      if (z < 0.0) z = 0.0;
    }
    return z;
  });

  FellerMcResult res;
  res.replicates = replicates;
  res.mass = sample_stats(finals);
  std::vector<double> lap(finals.size());
  int extinct = 0;
  for (std::size_t i = 0; i < finals.size(); ++i) {
    lap[i] = std::exp(-lambda * finals[i]);
    if (finals[i] == 0.0) ++extinct;
  }
  res.laplace = sample_stats(lap);
  res.extinction_freq = static_cast<double>(extinct) / replicates;
  res.extinction_se = std::sqrt(res.extinction_freq * (1.0 - res.extinction_freq) /
                                replicates);
  return res;
}

}  // namespace mvlab
