#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mvlab/errors.hpp"
#include "mvlab/fourier.hpp"
#include "mvlab/functionals.hpp"
#include "mvlab/measure.hpp"
#include "mvlab/pathspace.hpp"
#include "mvlab/simulator.hpp"
#include "mvlab/stats.hpp"

namespace mvlab {

/// All four right-hand-side terms of the Ito decomposition on one path, plus
/// the left-hand side and their mismatch. residual_rel is filled by ensemble
/// summaries (residual over ensemble RMS of lhs); per-path relative values
/// would blow up on near-extinct paths.
struct ItoReport {
  std::string functional;
  int replicate{0};
  double dt{0.0};
  std::uint64_t seed{0};
  double t{0.0};
  double lhs{0.0};
  double term_time{0.0};
  double term_gen{0.0};
  double term_quad{0.0};
  double term_mart{0.0};
  double residual{0.0};
  double residual_rel{0.0};
  bool extinct{false};
  bool analytic{true};
};

/// Discrete stochastic integral against the martingale measure:
///   sum over t_k < t of <X(t_{k+1}), g_k> - <X(t_k), g_k> - dt <X(t_k), A g_k>
/// with the predictable left-endpoint integrand g_k = integrand(k, t_k).
inline double integrate_martingale_measure(
    const MeasurePath& path, const std::function<FourierField(int, double)>& integrand,
    double t, double bound = 1e6) {
  const int t_idx = path.index_of_time(t);
  const double dt = path.dt();
  double acc = 0.0;
  for (int k = 0; k < t_idx; ++k) {
    const FourierField g = integrand(k, path.times[static_cast<std::size_t>(k)]);
    if (sup_bound(g) > bound)
      throw UnboundedIntegrandError("integrate_martingale_measure: integrand bound");
    const FourierField ag = apply_generator(g);
    const FiniteMeasure& xk = path.snapshots[static_cast<std::size_t>(k)];
    const FiniteMeasure& xk1 = path.snapshots[static_cast<std::size_t>(k) + 1];
    acc += integrate(xk1, g) - integrate(xk, g) - dt * integrate(xk, ag);
  }
  return acc;
}

/// Predicted quadratic variation c * int_0^t <X(s), field^2> ds as a left
/// Riemann sum, with field^2 formed by exact-degree collocation.
inline double quadratic_variation_nu(const MeasurePath& path, const FourierField& field,
                                     double t) {
  const int t_idx = path.index_of_time(t);
  const double dt = path.dt();
  const FourierField sq =
      multiply_projected(field, field, std::max(1, 2 * field.modes()));
  double acc = 0.0;
  for (int k = 0; k < t_idx; ++k)
    acc += dt * integrate(path.snapshots[static_cast<std::size_t>(k)], sq);
  return path.params.c * acc;
}

namespace detail {

inline ItoReport assemble_ito(const Functional& F, const MeasurePath& path, double t,
                              int replicate) {
  GridPath gp(path);
  const int t_idx = gp.index_of_time(t);
  auto provider = F.make_provider(gp);

  ItoReport rep;
  rep.functional = F.name();
  rep.replicate = replicate;
  rep.dt = path.dt();
  rep.seed = path.params.seed;
  rep.t = gp.time_at(t_idx);
  rep.lhs = F.eval(stop_at_index(gp, t_idx)) - F.eval(stop_at_index(gp, 0));
  for (int k = 0; k < t_idx; ++k) {
    const ItoStepIncrements inc = provider->step(k);
    rep.term_time += inc.time_term;
    rep.term_gen += inc.gen_term;
    rep.term_quad += inc.quad_term;
    rep.term_mart += inc.mart_term;
  }
  rep.residual =
      rep.lhs - (rep.term_time + rep.term_gen + rep.term_quad + rep.term_mart);
  rep.extinct = path.snapshots[static_cast<std::size_t>(t_idx)].is_zero();
  rep.analytic = provider->analytic();
  return rep;
}

}  // namespace detail

/// Ito decomposition for a path functional F(t, omega_t).
inline ItoReport ito_terms_functional(const Functional& F, const MeasurePath& path,
                                      double t, int replicate = 0) {
  return detail::assemble_ito(F, path, t, replicate);
}

/// Ito decomposition for a state functional F(t, omega(t)). Same assembly as
/// the path route (the slice identity makes them coincide); the flag check is
/// the only difference.
inline ItoReport ito_terms_state(const Functional& F, const MeasurePath& path, double t,
                                 int replicate = 0) {
  if (!F.is_state())
    throw InvalidParamsError("ito_terms_state: functional depends on the whole path");
  return detail::assemble_ito(F, path, t, replicate);
}

/// F(t, X_t) - F(0, X_0) - integral of the vertical derivative against the
/// martingale measure. Zero in expectation exactly when F is a martingale.
inline double representation_residual(const Functional& F, const MeasurePath& path,
                                      double t, double bound = 1e6) {
  if (!F.is_martingale())
    throw NotAMartingaleError("representation_residual: functional not flagged");
  GridPath gp(path);
  const int t_idx = gp.index_of_time(t);
  const double lhs =
      F.eval(stop_at_index(gp, t_idx)) - F.eval(stop_at_index(gp, 0));
  auto integrand = [&F, &gp](int k, double) {
    return F.vertical_field(stop_at_index(gp, k));
  };
  return lhs - integrate_martingale_measure(path, integrand, t, bound);
}

/// Martingale-problem check over an ensemble: mean of M(T)(phi) against 0 at
/// se_mult standard errors, and empirical vs predicted quadratic variation
/// within qv_band. iso_ratio is the discrete Ito isometry diagnostic
/// Var(M(T)(phi)) / mean predicted QV.
struct MpSummary {
  int replicates{0};
  SampleStats mart;
  double qv_emp_mean{0.0};
  double qv_pred_mean{0.0};
  double qv_ratio{0.0};
  bool qv_defined{false};
  double iso_ratio{0.0};
  bool mean_pass{false};
  bool qv_pass{false};
};

namespace detail {

struct MpSample {
  double mart{0.0};
  double qv_emp{0.0};
  double qv_pred{0.0};
};

inline MpSample mp_sample(const MeasurePath& path, const FourierField& phi) {
  const MartingaleIncrements inc = martingale_increments(path, phi);
  MpSample s;
  s.mart = inc.total();
  s.qv_emp = quadratic_variation_empirical(inc);
  s.qv_pred = quadratic_variation_nu(path, phi, path.horizon());
  return s;
}

inline MpSummary mp_reduce(const std::vector<MpSample>& samples, double se_mult,
                           double qv_band) {
  if (samples.size() < 30)
    throw TooFewReplicatesError("mp_verification: need at least 30 replicates");
  std::vector<double> marts(samples.size());
  MpSummary sum;
  sum.replicates = static_cast<int>(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    marts[i] = samples[i].mart;
    sum.qv_emp_mean += samples[i].qv_emp;
    sum.qv_pred_mean += samples[i].qv_pred;
  }
  sum.qv_emp_mean /= static_cast<double>(samples.size());
  sum.qv_pred_mean /= static_cast<double>(samples.size());
  sum.mart = sample_stats(marts);

  sum.mean_pass = std::fabs(sum.mart.mean) <= se_mult * sum.mart.se ||
                  (sum.mart.mean == 0.0 && sum.mart.se == 0.0);
  sum.qv_defined = sum.qv_pred_mean > 1e-12;
  if (sum.qv_defined) {
    sum.qv_ratio = sum.qv_emp_mean / sum.qv_pred_mean;
    sum.iso_ratio = sum.mart.sd * sum.mart.sd / sum.qv_pred_mean;
    sum.qv_pass = std::fabs(sum.qv_ratio - 1.0) <= qv_band;
  } else {
    // No prediction to compare against (c = 0 or zero paths); the empirical
    // sum still carries O(1/N) motion noise, so no band applies.
    sum.qv_pass = true;
  }
  return sum;
}

}  // namespace detail

inline MpSummary mp_verification(const std::vector<MeasurePath>& paths,
                                 const FourierField& phi, double se_mult = 3.0,
                                 double qv_band = 0.10) {
  std::vector<detail::MpSample> samples(paths.size());
  for (std::size_t i = 0; i < paths.size(); ++i)
    samples[i] = detail::mp_sample(paths[i], phi);
  return detail::mp_reduce(samples, se_mult, qv_band);
}

/// Streaming variant: simulates replicate r with stream index r, keeping one
/// path in memory per worker. Reduction order is replicate order regardless
/// of threads.
inline MpSummary mp_verification(const SimParams& params, const FourierField& phi,
                                 int replicates, int threads = 1, double se_mult = 3.0,
                                 double qv_band = 0.10) {
  if (replicates < 30)
    throw TooFewReplicatesError("mp_verification: need at least 30 replicates");
  std::vector<detail::MpSample> samples =
      parallel_map(replicates, threads, [&](int r) {
        return detail::mp_sample(simulate_path(params, r), phi);
      });
  return detail::mp_reduce(samples, se_mult, qv_band);
}

}  // namespace mvlab
