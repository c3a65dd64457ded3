#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mvlab/errors.hpp"
#include "mvlab/fourier.hpp"
#include "mvlab/measure.hpp"
#include "mvlab/rng.hpp"

namespace mvlab {

/// Parameters of the branching particle approximation. Particles carry mass
/// 1/N each; the initial state is round(N * initial_mass) particles.
struct SimParams {
  int n_particles{2000};   // N: sets the particle mass scale 1/N
  double c{1.0};           // branching intensity in the quadratic variation
  double T{1.0};
  double dt{1.0 / 512.0};
  double initial_mass{1.0};
  std::uint64_t seed{0};

  enum class Init { kUniform, kPoint };
  Init init{Init::kUniform};
  double init_point{0.0};  // used when init == kPoint

  double particle_cap{1e7};  // population cap; exceeding aborts the replicate

  int steps() const {
    const auto L = static_cast<long long>(std::llround(T / dt));
    return static_cast<int>(L);
  }

  /// Per-step branching variance c*N*dt should be small for the Euler
  /// splitting to be accurate; flagged, not fatal.
  bool branching_warning() const { return c * n_particles * dt > 0.1; }
};

inline void validate(const SimParams& p) {
  if (p.n_particles < 1) throw InvalidParamsError("SimParams: n_particles must be >= 1");
  if (!(p.c >= 0.0)) throw InvalidParamsError("SimParams: c must be >= 0");
  if (!(p.T > 0.0)) throw InvalidParamsError("SimParams: T must be > 0");
  if (!(p.dt > 0.0)) throw InvalidParamsError("SimParams: dt must be > 0");
  if (!(p.initial_mass >= 0.0)) throw InvalidParamsError("SimParams: initial_mass must be >= 0");
  if (!(p.particle_cap > 0.0)) throw InvalidParamsError("SimParams: particle_cap must be > 0");
  const double L = p.T / p.dt;
  if (std::fabs(L - std::llround(L)) > 1e-9 * std::max(1.0, L))
    throw InvalidParamsError("SimParams: T must be an integer multiple of dt");
  if (p.steps() < 1) throw InvalidParamsError("SimParams: need at least one step");
}

/// Discrete skeleton of one measure-valued trajectory on the grid t_k = k*dt.
struct MeasurePath {
  std::vector<double> times;
  std::vector<FiniteMeasure> snapshots;
  SimParams params;

  int steps() const { return static_cast<int>(times.size()) - 1; }
  double dt() const { return params.dt; }
  double horizon() const { return times.back(); }

  /// Snap a time in [0, T] to the nearest grid index.
  int index_of_time(double t) const {
    const double tol = 1e-9 * std::max(1.0, horizon());
    if (t < -tol || t > horizon() + tol)
      throw TimeOutOfRangeError("time outside [0, T]");
    const int k = static_cast<int>(std::llround(t / params.dt));
    return std::min(std::max(k, 0), steps());
  }
};

/// One trajectory of the particle system. Each step: every particle makes an
/// independent Brownian move (sd sqrt(dt), wrapped), then the population
/// branches critically (0 or 2 offspring, equal odds). The per-step branching
/// variance v = c*N*dt is realized in ceil(v/0.5) rounds of per-round
/// probability v/rounds, which compounds to variance exactly v per particle
/// and reduces to a single draw whenever v <= 0.5.
///
/// The replicate index derives the RNG stream, so replicates are independent
/// and reproducible in any execution order.
inline MeasurePath simulate_path(const SimParams& params, std::uint64_t replicate = 0) {
  validate(params);
  RngStream rng(params.seed, replicate);

  const int L = params.steps();
  const int N = params.n_particles;
  const double w = 1.0 / static_cast<double>(N);
  const double sd = std::sqrt(params.dt);
  const auto cap = static_cast<std::size_t>(params.particle_cap);

  const long long n0 = std::llround(static_cast<double>(N) * params.initial_mass);
  if (static_cast<double>(n0) > params.particle_cap)
    throw MassExplosionError("initial population exceeds particle cap");

  std::vector<double> pos;
  pos.reserve(static_cast<std::size_t>(std::max<long long>(n0, 16)) * 2);
  for (long long i = 0; i < n0; ++i) {
    pos.push_back(params.init == SimParams::Init::kUniform ? rng.next_u01()
                                                           : wrap_unit(params.init_point));
  }

  const double v = params.c * static_cast<double>(N) * params.dt;
  const int rounds = v > 0.0 ? static_cast<int>(std::ceil(v / 0.5)) : 0;
  const double q = rounds > 0 ? v / rounds : 0.0;
  const double q_half = 0.5 * q;

  MeasurePath path;
  path.params = params;
  path.times.reserve(static_cast<std::size_t>(L) + 1);
  path.snapshots.reserve(static_cast<std::size_t>(L) + 1);
  path.times.push_back(0.0);
  path.snapshots.push_back(FiniteMeasure::equal_weights(pos, w));

  std::vector<double> next;
  for (int k = 0; k < L; ++k) {
    for (double& x : pos) x = wrap_unit(x + sd * rng.next_normal());
    for (int r = 0; r < rounds; ++r) {
      next.clear();
      next.reserve(pos.size() + pos.size() / 4 + 16);
      for (double x : pos) {
        const double u = rng.next_u01();
        if (u < q_half) continue;  // no offspring
        next.push_back(x);
        if (u < q) next.push_back(x);  // split in two
      }
      pos.swap(next);
      if (pos.size() > cap)
        throw MassExplosionError("population cap exceeded at step " + std::to_string(k + 1));
    }
    path.times.push_back((k + 1 == L) ? params.T : (k + 1) * params.dt);
    path.snapshots.push_back(FiniteMeasure::equal_weights(pos, w));
  }
  return path;
}

/// Discrete compensated increments of the martingale problem:
///   dM_k(phi) = <X(t_{k+1}), phi> - <X(t_k), phi> - dt * <X(t_k), A phi>.
struct MartingaleIncrements {
  std::vector<double> deltas;

  double total() const {
    double s = 0.0;
    for (double d : deltas) s += d;
    return s;
  }
};

inline MartingaleIncrements martingale_increments(const MeasurePath& path,
                                                  const FourierField& phi) {
  const FourierField gen_phi = apply_generator(phi);
  const int L = path.steps();
  MartingaleIncrements out;
  out.deltas.reserve(static_cast<std::size_t>(L));
  double y_prev = integrate(path.snapshots[0], phi);
  for (int k = 0; k < L; ++k) {
    const double y_next = integrate(path.snapshots[static_cast<std::size_t>(k) + 1], phi);
    const double drift = path.dt() * integrate(path.snapshots[static_cast<std::size_t>(k)], gen_phi);
    out.deltas.push_back(y_next - y_prev - drift);
    y_prev = y_next;
  }
  return out;
}

/// Sum of squared increments: the realized quadratic variation estimate.
inline double quadratic_variation_empirical(const MartingaleIncrements& inc) {
  double s = 0.0;
  for (double d : inc.deltas) s += d * d;
  return s;
}

/// First grid time with zero mass, if any. Extinction is absorbing.
inline std::optional<double> extinction_time(const MeasurePath& path) {
  for (std::size_t k = 0; k < path.snapshots.size(); ++k) {
    if (path.snapshots[k].is_zero()) return path.times[k];
  }
  return std::nullopt;
}

}  // namespace mvlab
