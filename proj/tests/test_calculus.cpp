#include "mvlab/calculus.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mvlab/feller.hpp"
#include "mvlab/fourier.hpp"
#include "mvlab/functionals.hpp"
#include "mvlab/loglaplace.hpp"
#include "mvlab/simulator.hpp"

namespace mvlab {
namespace {

MeasurePath sim(int n, int steps, std::uint64_t seed, double c = 1.0, double T = 1.0) {
  SimParams params;
  params.n_particles = n;
  params.dt = T / steps;
  params.T = T;
  params.c = c;
  params.seed = seed;
  return simulate_path(params);
}

MeasurePath constant_mass_path(int steps, double dt, double c) {
  MeasurePath path;
  path.params.dt = dt;
  path.params.T = steps * dt;
  path.params.c = c;
  for (int k = 0; k <= steps; ++k) {
    path.times.push_back(k * dt);
    path.snapshots.push_back(FiniteMeasure({Atom{circle_point(0.25), 1.0}}));
  }
  return path;
}

TEST(MartingaleMeasureTest, TrivialIntegrands) {
  MeasurePath path = sim(100, 64, 1);
  auto zero = [](int, double) { return constant_field(0.0); };
  EXPECT_DOUBLE_EQ(integrate_martingale_measure(path, zero, 1.0), 0.0);

  auto one = [](int, double) { return constant_field(1.0); };
  const double got = integrate_martingale_measure(path, one, 1.0);
  const double want =
      path.snapshots.back().total_mass() - path.snapshots.front().total_mass();
  EXPECT_NEAR(got, want, 1e-12 * std::max(1.0, std::fabs(want)));
}

TEST(MartingaleMeasureTest, TimeIndependentFieldMatchesIncrementSum) {
  MeasurePath path = sim(120, 64, 3);
  const FourierField phi = added(constant_field(0.5), cos_field(1, 1.0));
  auto producer = [&phi](int, double) { return phi; };
  const double via_mm = integrate_martingale_measure(path, producer, 1.0);
  const double via_inc = martingale_increments(path, phi).total();
  EXPECT_DOUBLE_EQ(via_mm, via_inc);
}

TEST(MartingaleMeasureTest, BoundIsEnforced) {
  MeasurePath path = sim(50, 16, 2);
  auto big = [](int, double) { return constant_field(2.0); };
  EXPECT_THROW(integrate_martingale_measure(path, big, 1.0, 0.5),
               UnboundedIntegrandError);
  EXPECT_NO_THROW(integrate_martingale_measure(path, big, 1.0, 3.0));
}

TEST(QuadraticVariationNuTest, ClosedFormOnConstantPath) {
  MeasurePath path = constant_mass_path(8, 0.125, 1.0);
  EXPECT_DOUBLE_EQ(quadratic_variation_nu(path, constant_field(1.0), 1.0), 1.0);
  EXPECT_DOUBLE_EQ(quadratic_variation_nu(path, constant_field(1.0), 0.5), 0.5);

  MeasurePath zero;
  zero.params.dt = 0.125;
  zero.params.T = 1.0;
  zero.params.c = 1.0;
  for (int k = 0; k <= 8; ++k) {
    zero.times.push_back(k * 0.125);
    zero.snapshots.push_back(FiniteMeasure());
  }
  EXPECT_DOUBLE_EQ(quadratic_variation_nu(zero, constant_field(1.0), 1.0), 0.0);
}

TEST(QuadraticVariationNuTest, DoublesWithBranchingRate) {
  MeasurePath path = sim(100, 64, 7, 1.0);
  MeasurePath path2 = path;
  path2.params.c = 2.0;
  const FourierField phi = cos_field(1, 1.0);
  EXPECT_DOUBLE_EQ(quadratic_variation_nu(path2, phi, 1.0),
                   2.0 * quadratic_variation_nu(path, phi, 1.0));
}

TEST(ItoAssemblyTest, LinearFunctionalResidualIsZero) {
  MeasurePath path = sim(200, 64, 11);
  const FourierField phi = added(constant_field(1.0), cos_field(1, 0.5));
  auto F = make_linear(phi);
  const ItoReport rep = ito_terms_functional(*F, path, 1.0);

  EXPECT_NEAR(rep.residual, 0.0, 1e-12);
  EXPECT_DOUBLE_EQ(rep.term_time, 0.0);
  EXPECT_DOUBLE_EQ(rep.term_quad, 0.0);
  EXPECT_TRUE(rep.analytic);
  EXPECT_FALSE(rep.extinct);
  EXPECT_EQ(rep.functional, "linear");

  // Also exact for phi = cos(2 pi x) alone, the pure-oscillation case.
  auto Fc = make_linear(cos_field(1, 1.0));
  EXPECT_NEAR(ito_terms_functional(*Fc, path, 1.0).residual, 0.0, 1e-12);
}

TEST(ItoAssemblyTest, TimeLinearResidualIsTheCrossTermTelescope) {
  // t * <omega(t), phi> is not exactly closed: the predictable-integrand sums
  // leave dt * d<omega, phi> per step, which telescopes over the whole path.
  MeasurePath path = sim(200, 64, 11);
  const FourierField phi = added(constant_field(1.0), cos_field(1, 0.5));
  auto F = make_time_linear(phi);
  const ItoReport rep = ito_terms_state(*F, path, 1.0);

  const double dy = integrate(path.snapshots.back(), phi) -
                    integrate(path.snapshots.front(), phi);
  EXPECT_NEAR(rep.residual, path.params.dt * dy, 1e-12);
}

TEST(ItoAssemblyTest, StateRouteIdenticalToFunctionalRoute) {
  MeasurePath path = sim(150, 64, 13);
  auto F = make_exp_state(added(constant_field(1.0), cos_field(1, 0.5)));
  const ItoReport a = ito_terms_state(*F, path, 1.0);
  const ItoReport b = ito_terms_functional(*F, path, 1.0);

  EXPECT_EQ(a.lhs, b.lhs);
  EXPECT_EQ(a.term_time, b.term_time);
  EXPECT_EQ(a.term_gen, b.term_gen);
  EXPECT_EQ(a.term_quad, b.term_quad);
  EXPECT_EQ(a.term_mart, b.term_mart);
  EXPECT_EQ(a.residual, b.residual);

  auto Fpath = make_product_path(constant_field(1.0), constant_field(1.0));
  EXPECT_THROW(ito_terms_state(*Fpath, path, 1.0), InvalidParamsError);
}

TEST(ItoAssemblyTest, ReportsAreLinearInTheFunctional) {
  MeasurePath path = sim(120, 64, 17);
  const FourierField phi = added(constant_field(0.8), cos_field(1, 0.4));
  const double alpha = 0.7, beta = -1.3;

  StateOuter o;
  o.f = [alpha, beta](double, const std::vector<double>& y) {
    return alpha * y[0] * y[0] + beta * y[0];
  };
  o.df_dt = [](double, const std::vector<double>&) { return 0.0; };
  o.d1 = [alpha, beta](int, double, const std::vector<double>& y) {
    return 2.0 * alpha * y[0] + beta;
  };
  o.d2 = [alpha](int, int, double, const std::vector<double>&) { return 2.0 * alpha; };
  o.d3 = [](int, int, int, double, const std::vector<double>&) { return 0.0; };
  o.label = "combo";
  CylindricalState combo(std::move(o), {phi});

  const ItoReport rc = ito_terms_functional(combo, path, 1.0);
  const ItoReport rq = ito_terms_functional(*make_quadratic(phi), path, 1.0);
  const ItoReport rl = ito_terms_functional(*make_linear(phi), path, 1.0);

  const double tol = 1e-10;
  EXPECT_NEAR(rc.lhs, alpha * rq.lhs + beta * rl.lhs, tol);
  EXPECT_NEAR(rc.term_gen, alpha * rq.term_gen + beta * rl.term_gen, tol);
  EXPECT_NEAR(rc.term_quad, alpha * rq.term_quad + beta * rl.term_quad, tol);
  EXPECT_NEAR(rc.term_mart, alpha * rq.term_mart + beta * rl.term_mart, tol);
}

TEST(ItoAssemblyTest, ExpStateResidualSmallAndShrinksUnderRefinement) {
  const FourierField phi = added(constant_field(1.0), cos_field(1, 0.25));
  auto F = make_exp_state(phi);

  auto rms_ratio = [&](int steps) {
    std::vector<double> res, lhs;
    for (int r = 0; r < 24; ++r) {
      SimParams params;
      params.n_particles = 300;
      params.dt = 1.0 / steps;
      params.T = 1.0;
      params.seed = 31;
      MeasurePath path = simulate_path(params, r);
      const ItoReport rep = ito_terms_functional(*F, path, 1.0, r);
      res.push_back(rep.residual);
      lhs.push_back(rep.lhs);
    }
    return rms(res) / rms(lhs);
  };

  const double coarse = rms_ratio(128);
  const double fine = rms_ratio(512);
  EXPECT_LT(coarse, 0.1);
  EXPECT_LT(fine, coarse);
}

TEST(RepresentationTest, TrivialCases) {
  MeasurePath path = sim(100, 32, 19, 1.0, 0.5);

  // phi = 0 makes the exponential martingale constant 1.
  auto Fconst = make_exp_martingale(constant_field(0.0), 0.5, 1.0, 64, 4);
  EXPECT_DOUBLE_EQ(representation_residual(*Fconst, path, 0.5), 0.0);

  auto F = make_exp_martingale(constant_field(2.0), 0.5, 1.0, 256, 8);
  EXPECT_DOUBLE_EQ(representation_residual(*F, path, 0.0), 0.0);

  auto Flin = make_linear(constant_field(1.0));
  EXPECT_THROW(representation_residual(*Flin, path, 0.5), NotAMartingaleError);
}

TEST(RepresentationTest, ExpMartingaleResidualSmallAtSmokeScale) {
  auto F = make_exp_martingale(constant_field(2.0), 1.0, 1.0, 512, 8);
  std::vector<double> res, lhs;
  for (int r = 0; r < 30; ++r) {
    SimParams params;
    params.n_particles = 200;
    params.dt = 1.0 / 128.0;
    params.T = 1.0;
    params.seed = 23;
    MeasurePath path = simulate_path(params, r);
    res.push_back(representation_residual(*F, path, 1.0));
    lhs.push_back(F->eval(stop(GridPath(path), 1.0)) -
                  F->eval(stop(GridPath(path), 0.0)));
  }
  const SampleStats rs = sample_stats(res);
  EXPECT_NEAR(rs.mean, 0.0, 4.0 * rs.se);
  EXPECT_LT(rms(res), 0.15 * rms(lhs));
}

TEST(MpVerificationTest, MassMartingaleAtSmokeScale) {
  SimParams params;
  params.n_particles = 300;
  params.dt = 1.0 / 128.0;
  params.T = 1.0;
  params.seed = 910;
  const MpSummary sum = mp_verification(params, constant_field(1.0), 60);

  EXPECT_EQ(sum.replicates, 60);
  EXPECT_TRUE(sum.mean_pass);
  EXPECT_TRUE(sum.qv_defined);
  EXPECT_NEAR(sum.qv_ratio, 1.0, 0.15);
  EXPECT_NEAR(sum.iso_ratio, 1.0, 0.5);
  EXPECT_THROW(mp_verification(params, constant_field(1.0), 20),
               TooFewReplicatesError);
}

TEST(MpVerificationTest, HeatFlowHasNoQuadraticVariation) {
  SimParams params;
  params.n_particles = 200;
  params.dt = 1.0 / 64.0;
  params.T = 0.5;
  params.c = 0.0;
  params.seed = 4;
  const MpSummary sum = mp_verification(params, cos_field(1, 1.0), 40);

  EXPECT_FALSE(sum.qv_defined);
  EXPECT_TRUE(sum.qv_pass);  // both sides vanish
  EXPECT_TRUE(sum.mean_pass);
}

TEST(MpVerificationTest, DegeneratePathCollectionGivesExactZeros) {
  std::vector<MeasurePath> paths;
  for (int r = 0; r < 30; ++r) paths.push_back(constant_mass_path(8, 0.125, 0.0));
  const MpSummary sum = mp_verification(paths, constant_field(1.0));
  EXPECT_EQ(sum.mart.mean, 0.0);
  EXPECT_EQ(sum.mart.sd, 0.0);
  EXPECT_TRUE(sum.mean_pass);
  EXPECT_FALSE(sum.qv_defined);
  EXPECT_TRUE(sum.qv_pass);
}

TEST(MpVerificationTest, StreamingMatchesPathCollectionRoute) {
  SimParams params;
  params.n_particles = 80;
  params.dt = 1.0 / 32.0;
  params.T = 0.5;
  params.seed = 55;
  const FourierField phi = cos_field(1, 1.0);

  std::vector<MeasurePath> paths;
  for (int r = 0; r < 32; ++r) paths.push_back(simulate_path(params, r));
  const MpSummary a = mp_verification(paths, phi);
  const MpSummary b = mp_verification(params, phi, 32);
  const MpSummary c = mp_verification(params, phi, 32, 2);

  EXPECT_EQ(a.mart.mean, b.mart.mean);
  EXPECT_EQ(a.qv_emp_mean, b.qv_emp_mean);
  EXPECT_EQ(b.mart.mean, c.mart.mean);
  EXPECT_EQ(b.qv_pred_mean, c.qv_pred_mean);
}

}  // namespace
}  // namespace mvlab
