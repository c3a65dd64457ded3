#include "mvlab/loglaplace.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "mvlab/feller.hpp"
#include "mvlab/fourier.hpp"
#include "mvlab/pathspace.hpp"
#include "mvlab/simulator.hpp"

namespace mvlab {
namespace {

TEST(LogLaplaceSolverTest, ConstantFieldFollowsRiccatiSolution) {
  // u' = -(c/2) u^2 for spatially constant data: u(s) = lambda / (1 + (c/2) lambda s).
  const double lambda = 2.0;
  LogLaplaceSolution sol = solve_log_laplace(constant_field(lambda), 1.0, 1.0);

  EXPECT_NEAR(sol.at(1.0).a0, 1.0, 1e-8);
  EXPECT_NEAR(sol.at(0.5).a0, lambda / (1.0 + 0.5 * lambda * 0.5), 1e-8);
  EXPECT_NEAR(sol.at(0.25).a0, lambda / (1.0 + 0.5 * lambda * 0.25), 1e-8);
  for (int k = 1; k <= 16; ++k) {
    EXPECT_NEAR(sol.at(1.0).ac[static_cast<std::size_t>(k - 1)], 0.0, 1e-14);
    EXPECT_NEAR(sol.at(1.0).as[static_cast<std::size_t>(k - 1)], 0.0, 1e-14);
  }
}

TEST(LogLaplaceSolverTest, ZeroFieldStaysZero) {
  LogLaplaceSolution sol = solve_log_laplace(constant_field(0.0), 1.0, 1.0, 64, 8);
  for (const FourierField& u : sol.slices) {
    EXPECT_EQ(u.a0, 0.0);
    EXPECT_EQ(sup_bound(u), 0.0);
  }
}

TEST(LogLaplaceSolverTest, HeatFlowExactWhenCIsZero) {
  FourierField phi = added(constant_field(1.0), cos_field(2, 1.0));
  LogLaplaceSolution sol = solve_log_laplace(phi, 0.25, 0.0, 256, 8);

  const double decay = std::exp(-0.5 * kTwoPi * kTwoPi * 4.0 * 0.25);
  EXPECT_NEAR(sol.at(0.25).a0, 1.0, 1e-14);
  EXPECT_NEAR(sol.at(0.25).ac[1], decay, 1e-12 * std::max(1.0, decay));
  EXPECT_EQ(sol.at(0.25).as[1], 0.0);
}

TEST(LogLaplaceSolverTest, HighModeDataStaysStableAtDefaults) {
  // The stiffest resolved mode; an unsplit explicit stepper diverges here.
  FourierField phi = added(constant_field(1.1), cos_field(16, 1.0));
  LogLaplaceSolution sol = solve_log_laplace(phi, 1.0, 1.0);
  EXPECT_TRUE(std::isfinite(sol.at(1.0).a0));
  EXPECT_LT(sup_bound(sol.at(1.0)), sup_bound(phi));
  EXPECT_NEAR(sol.at(1.0).ac[15], 0.0, 1e-10);
}

TEST(LogLaplaceSolverTest, InputValidation) {
  EXPECT_THROW(solve_log_laplace(cos_field(1, 1.0), 1.0, 1.0), NegativeInputError);
  EXPECT_THROW(solve_log_laplace(constant_field(1.0), 0.0, 1.0), InvalidParamsError);
  EXPECT_THROW(solve_log_laplace(constant_field(1.0), 1.0, -1.0), InvalidParamsError);
  EXPECT_THROW(solve_log_laplace(added(constant_field(1.0), cos_field(3, 0.5)), 1.0,
                                 1.0, 64, 2),
               InvalidParamsError);
  LogLaplaceSolution sol = solve_log_laplace(constant_field(1.0), 1.0, 1.0, 64, 4);
  EXPECT_THROW(sol.at(1.5), TimeOutOfRangeError);
  EXPECT_THROW(sol.at(-0.5), TimeOutOfRangeError);
}

TEST(ExpMartingaleTest, TerminalSliceIsThePayoffField) {
  const FourierField phi = added(constant_field(1.0), cos_field(1, 0.5));
  auto F = make_exp_martingale(phi, 1.0, 1.0, 256, 8);

  MeasurePath path;
  path.params.dt = 0.25;
  path.params.T = 1.0;
  for (int k = 0; k <= 4; ++k) {
    path.times.push_back(k * 0.25);
    path.snapshots.push_back(FiniteMeasure({Atom{circle_point(0.3), 0.8}}));
  }
  GridPath gp(path);
  StoppedPath sp = stop(gp, 1.0);

  const double direct = std::exp(-integrate(sp.final_measure(), phi));
  EXPECT_NEAR(F->eval(sp), direct, 1e-12);
  EXPECT_TRUE(F->is_martingale());
  EXPECT_TRUE(F->has_analytic_derivatives());
}

TEST(ExpMartingaleTest, ZeroMeasurePathGivesOne) {
  const FourierField phi = constant_field(2.0);
  auto F = make_exp_martingale(phi, 1.0, 1.0, 128, 4);

  MeasurePath path;
  path.params.dt = 0.5;
  path.params.T = 1.0;
  for (int k = 0; k <= 2; ++k) {
    path.times.push_back(k * 0.5);
    path.snapshots.push_back(FiniteMeasure());
  }
  GridPath gp(path);
  for (double t : {0.0, 0.5, 1.0}) {
    StoppedPath sp = stop(gp, t);
    EXPECT_DOUBLE_EQ(F->eval(sp), 1.0);
    EXPECT_TRUE(std::isfinite(F->vertical(sp, circle_point(0.2))));
    EXPECT_TRUE(std::isfinite(F->horizontal(sp)));
  }
}

TEST(ExpMartingaleTest, DriftTermsCancelPerStep) {
  const FourierField phi = added(constant_field(1.0), cos_field(1, 0.5));
  auto F = make_exp_martingale(phi, 0.5, 1.0, 512, 16);

  SimParams params;
  params.n_particles = 100;
  params.dt = 1.0 / 64.0;
  params.T = 0.5;
  params.seed = 2025;
  MeasurePath path = simulate_path(params);
  GridPath gp(path);
  auto provider = F->make_provider(gp);

  double drift = 0.0, mart = 0.0;
  for (int k = 0; k < gp.steps(); ++k) {
    const ItoStepIncrements inc = provider->step(k);
    const double step_drift = inc.time_term + inc.gen_term + inc.quad_term;
    EXPECT_NEAR(step_drift, 0.0, 1e-13);
    drift += step_drift;
    mart += std::fabs(inc.mart_term);
  }
  ASSERT_GT(mart, 0.0);
  EXPECT_LT(std::fabs(drift) / mart, 1e-10);
}

TEST(ExpMartingaleTest, ProviderRejectsMismatchedBranchingRate) {
  auto F = make_exp_martingale(constant_field(1.0), 0.5, 1.0, 64, 4);
  SimParams params;
  params.n_particles = 20;
  params.dt = 1.0 / 16.0;
  params.T = 0.5;
  params.c = 2.0;
  MeasurePath path = simulate_path(params);
  GridPath gp(path);
  EXPECT_THROW(F->make_provider(gp), InvalidParamsError);
}

TEST(ExpMartingaleTest, DerivativesMatchNumericStencils) {
  const FourierField phi = added(constant_field(1.0), cos_field(2, 0.4));
  auto F = make_exp_martingale(phi, 0.5, 1.0, 512, 16);

  SimParams params;
  params.n_particles = 80;
  params.dt = 1.0 / 32.0;
  params.T = 0.5;
  params.seed = 5;
  MeasurePath path = simulate_path(params);
  GridPath gp(path);
  StoppedPath sp = stop(gp, 0.25);

  auto f = [&F](const StoppedPath& s) { return F->eval(s); };
  for (double x : {0.05, 0.5, 0.77}) {
    const double analytic = F->vertical(sp, circle_point(x));
    EXPECT_NEAR(numeric_vertical_derivative(f, sp, circle_point(x)), analytic,
                1e-6 * std::max(1.0, std::fabs(analytic)));
  }
  // Horizontal stencil crosses solver slices, so only first order in h.
  const double ah = F->horizontal(sp);
  EXPECT_NEAR(numeric_horizontal_derivative(f, sp), ah,
              5e-2 * std::max(1.0, std::fabs(ah)));
}

TEST(MeanLaplaceTest, MatchesRiccatiValueAtSmokeScale) {
  SimParams params;
  params.n_particles = 300;
  params.dt = 1.0 / 128.0;
  params.T = 1.0;
  params.seed = 808;
  const SampleStats stats = mean_laplace_functional(params, constant_field(2.0), 150);

  const double want = feller_laplace(2.0, 1.0, 1.0, 1.0);  // e^{-1}
  EXPECT_NEAR(stats.mean, want, 4.0 * stats.se + 0.02);
  EXPECT_THROW(mean_laplace_functional(params, cos_field(1, 1.0), 10),
               NegativeInputError);
}

TEST(MeanLaplaceTest, TrivialAndMonotoneCases) {
  SimParams params;
  params.n_particles = 100;
  params.dt = 1.0 / 32.0;
  params.T = 0.5;
  params.seed = 3;

  const SampleStats zero = mean_laplace_functional(params, constant_field(0.0), 20);
  EXPECT_DOUBLE_EQ(zero.mean, 1.0);
  EXPECT_DOUBLE_EQ(zero.sd, 0.0);

  const SampleStats lo = mean_laplace_functional(params, constant_field(0.5), 60);
  const SampleStats hi = mean_laplace_functional(params, constant_field(2.0), 60);
  EXPECT_GT(lo.mean, hi.mean);
}

}  // namespace
}  // namespace mvlab
