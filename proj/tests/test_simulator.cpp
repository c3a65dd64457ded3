#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mvlab/simulator.hpp"
#include "mvlab/stats.hpp"

namespace {

using namespace mvlab;

SimParams small_params() {
  SimParams p;
  p.n_particles = 200;
  p.c = 1.0;
  p.T = 0.25;
  p.dt = 1.0 / 64.0;
  p.initial_mass = 1.0;
  p.seed = 11;
  return p;
}

bool paths_identical(const MeasurePath& a, const MeasurePath& b) {
  if (a.snapshots.size() != b.snapshots.size()) return false;
  for (std::size_t k = 0; k < a.snapshots.size(); ++k) {
    const auto& xa = a.snapshots[k].atoms();
    const auto& xb = b.snapshots[k].atoms();
    if (xa.size() != xb.size()) return false;
    for (std::size_t i = 0; i < xa.size(); ++i) {
      if (xa[i].position.x != xb[i].position.x || xa[i].weight != xb[i].weight) return false;
    }
  }
  return true;
}

TEST(Simulator, DeterministicBySeedAndReplicate) {
  const SimParams p = small_params();
  EXPECT_TRUE(paths_identical(simulate_path(p, 4), simulate_path(p, 4)));
  EXPECT_FALSE(paths_identical(simulate_path(p, 4), simulate_path(p, 5)));
  SimParams p2 = p;
  p2.seed = 12;
  EXPECT_FALSE(paths_identical(simulate_path(p, 4), simulate_path(p2, 4)));
}

TEST(Simulator, InitialStateRealizesRequestedMass) {
  SimParams p = small_params();
  p.initial_mass = 1.5;
  const MeasurePath path = simulate_path(p);
  EXPECT_EQ(path.snapshots[0].atoms().size(), 300u);
  EXPECT_NEAR(path.snapshots[0].total_mass(), 1.5, 1e-12);
  for (const Atom& a : path.snapshots[0].atoms()) {
    EXPECT_GE(a.position.x, 0.0);
    EXPECT_LT(a.position.x, 1.0);
    EXPECT_DOUBLE_EQ(a.weight, 1.0 / 200.0);
  }
}

TEST(Simulator, PointInitPutsAllParticlesAtThePoint) {
  SimParams p = small_params();
  p.init = SimParams::Init::kPoint;
  p.init_point = 0.25;
  const MeasurePath path = simulate_path(p);
  for (const Atom& a : path.snapshots[0].atoms()) EXPECT_DOUBLE_EQ(a.position.x, 0.25);
}

TEST(Simulator, ZeroBranchingKeepsMassExactlyConstant) {
  SimParams p = small_params();
  p.c = 0.0;
  const MeasurePath path = simulate_path(p);
  const double m0 = path.snapshots[0].total_mass();
  for (const auto& snap : path.snapshots) EXPECT_EQ(snap.total_mass(), m0);
  // Mass increments vanish identically, so the phi = 1 martingale is zero.
  const MartingaleIncrements inc = martingale_increments(path, constant_field(1.0));
  EXPECT_EQ(quadratic_variation_empirical(inc), 0.0);
  EXPECT_FALSE(extinction_time(path).has_value());
  // Particles still move.
  EXPECT_NE(path.snapshots[1].atoms()[0].position.x, path.snapshots[0].atoms()[0].position.x);
}

TEST(Simulator, IncrementsTelescope) {
  const SimParams p = small_params();
  const MeasurePath path = simulate_path(p, 2);
  FourierField phi = cos_field(1, 0.8);
  phi.a0 = 0.5;
  const FourierField gen_phi = apply_generator(phi);
  const MartingaleIncrements inc = martingale_increments(path, phi);
  double drift = 0.0;
  for (int k = 0; k < path.steps(); ++k)
    drift += path.dt() * integrate(path.snapshots[static_cast<std::size_t>(k)], gen_phi);
  const double direct = integrate(path.snapshots.back(), phi) -
                        integrate(path.snapshots.front(), phi) - drift;
  EXPECT_NEAR(inc.total(), direct, 1e-10);
}

// Critical branching: the total mass is a martingale, its variance after time
// T is exactly c*T*m for this scheme, and extinction by T approaches the
// Feller value exp(-2m/(cT)). Checked against sample error bars.
TEST(Simulator, MassOraclesAtSmokeScale) {
  SimParams p;
  p.n_particles = 500;
  p.c = 1.0;
  p.T = 1.0;
  p.dt = 1.0 / 128.0;
  p.seed = 2024;
  const int R = 120;
  std::vector<double> final_mass(R);
  int extinct = 0;
  for (int r = 0; r < R; ++r) {
    const MeasurePath path = simulate_path(p, static_cast<std::uint64_t>(r));
    final_mass[static_cast<std::size_t>(r)] = path.snapshots.back().total_mass();
    if (path.snapshots.back().is_zero()) ++extinct;
  }
  const SampleStats st = sample_stats(final_mass);
  EXPECT_NEAR(st.mean, 1.0, 3.0 * st.se);
  // Var = c*T*m = 1; the variance estimator itself has sd ~ sqrt(5/R) ~ 0.2.
  EXPECT_GT(st.sd * st.sd, 0.4);
  EXPECT_LT(st.sd * st.sd, 1.7);
  const double p_ext = static_cast<double>(extinct) / R;
  const double se_ext = std::sqrt(p_ext * (1.0 - p_ext) / R);
  EXPECT_NEAR(p_ext, std::exp(-2.0), 4.0 * se_ext);
}

TEST(Simulator, ExtinctionIsAbsorbing) {
  SimParams p;
  p.n_particles = 50;
  p.c = 8.0;
  p.T = 1.0;
  p.dt = 1.0 / 64.0;
  p.seed = 5;
  bool saw_extinction = false;
  for (std::uint64_t r = 0; r < 12 && !saw_extinction; ++r) {
    const MeasurePath path = simulate_path(p, r);
    const auto ext = extinction_time(path);
    if (!ext) continue;
    saw_extinction = true;
    EXPECT_LT(*ext, p.T);
    const int k0 = path.index_of_time(*ext);
    for (std::size_t k = static_cast<std::size_t>(k0); k < path.snapshots.size(); ++k)
      EXPECT_TRUE(path.snapshots[k].is_zero());
  }
  EXPECT_TRUE(saw_extinction);  // extinction prob per path here is ~ 0.78
}

TEST(Simulator, PopulationCapAborts) {
  SimParams p;
  p.n_particles = 1000;
  p.c = 1.0;
  p.T = 1.0;
  p.dt = 1.0 / 64.0;
  p.particle_cap = 1050;  // one branching sd above the mean population
  p.seed = 3;
  EXPECT_THROW(
      {
        for (std::uint64_t r = 0; r < 8; ++r) simulate_path(p, r);
      },
      MassExplosionError);
}

TEST(Simulator, BranchingWarningFlag) {
  SimParams desk;  // defaults: N=2000, dt=1/512, c=1
  EXPECT_TRUE(desk.branching_warning());
  SimParams mild = desk;
  mild.c = 1e-5;
  EXPECT_FALSE(mild.branching_warning());
}

TEST(Simulator, ParamValidation) {
  SimParams p = small_params();
  p.dt = 0.3;  // T/dt not an integer
  EXPECT_THROW(validate(p), InvalidParamsError);
  p = small_params();
  p.dt = -0.1;
  EXPECT_THROW(validate(p), InvalidParamsError);
  p = small_params();
  p.c = -1.0;
  EXPECT_THROW(validate(p), InvalidParamsError);
  p = small_params();
  p.n_particles = 0;
  EXPECT_THROW(validate(p), InvalidParamsError);
  p = small_params();
  p.initial_mass = -0.5;
  EXPECT_THROW(validate(p), InvalidParamsError);
}

// With c = 0 the scheme is pure heat flow: mode k of the mean measure decays
// by exp(-(1/2)(2 pi k)^2 t). Wrapped normal increments make this exact in
// expectation, so a point initial condition gives a sharp spectral test.
TEST(Simulator, HeatFlowDecaysFirstModeAtGeneratorRate) {
  SimParams p;
  p.n_particles = 2000;
  p.c = 0.0;
  p.T = 0.125;
  p.dt = 1.0 / 64.0;
  p.init = SimParams::Init::kPoint;
  p.init_point = 0.0;
  p.seed = 77;
  const int R = 40;
  std::vector<double> mode1(R), mode2(R);
  for (int r = 0; r < R; ++r) {
    const MeasurePath path = simulate_path(p, static_cast<std::uint64_t>(r));
    mode1[static_cast<std::size_t>(r)] = integrate(path.snapshots.back(), cos_field(1, 1.0));
    mode2[static_cast<std::size_t>(r)] = integrate(path.snapshots.back(), cos_field(2, 1.0));
  }
  const SampleStats s1 = sample_stats(mode1);
  const SampleStats s2 = sample_stats(mode2);
  const double lam1 = -0.5 * kTwoPi * kTwoPi;
  EXPECT_NEAR(s1.mean, std::exp(lam1 * p.T), 3.0 * s1.se);
  EXPECT_NEAR(s2.mean, std::exp(4.0 * lam1 * p.T), 3.0 * s2.se);
  // The decay is strong enough that the wrong rate (missing the 1/2) would
  // put the mean many standard errors away.
  EXPECT_GT(s1.mean, 10.0 * s1.se);
}

TEST(Simulator, IndexOfTimeSnapsToGrid) {
  const MeasurePath path = simulate_path(small_params());
  EXPECT_EQ(path.index_of_time(0.0), 0);
  EXPECT_EQ(path.index_of_time(0.25), 16);
  EXPECT_EQ(path.index_of_time(1.0 / 64.0 + 1e-12), 1);
  EXPECT_EQ(path.index_of_time(0.0079), 1);  // nearest grid point
  EXPECT_EQ(path.index_of_time(0.0077), 0);
  EXPECT_THROW(path.index_of_time(0.26), TimeOutOfRangeError);
  EXPECT_THROW(path.index_of_time(-0.01), TimeOutOfRangeError);
}

TEST(ParallelMap, OrderedResultsAndErrorPropagation) {
  auto sq = [](int i) { return i * i; };
  const auto serial = parallel_map(40, 1, sq);
  const auto threaded = parallel_map(40, 4, sq);
  EXPECT_EQ(serial, threaded);
  EXPECT_THROW(parallel_map(10, 3,
                            [](int i) -> int {
                              if (i == 7) throw InvalidParamsError("boom");
                              return i;
                            }),
               InvalidParamsError);
}

}  // namespace
