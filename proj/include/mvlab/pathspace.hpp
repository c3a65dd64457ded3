#pragma once

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mvlab/errors.hpp"
#include "mvlab/measure.hpp"
#include "mvlab/simulator.hpp"

namespace mvlab {

/// Cadlag skeleton on the simulation grid: a base trajectory plus an optional
/// per-index remap. Remapping gives piecewise-reshuffled views (the dyadic
/// approximations below) without copying snapshots. Holds the base by
/// pointer; the MeasurePath must outlive every view derived from it.
class GridPath {
 public:
  GridPath(const MeasurePath& base)  // NOLINT: implicit by design
      : base_(&base) {}
  GridPath(const MeasurePath& base, std::vector<int> remap)
      : base_(&base), remap_(std::move(remap)) {
    if (!remap_.empty() && remap_.size() != base.times.size())
      throw InvalidParamsError("GridPath: remap length must match the grid");
  }

  const MeasurePath& base() const { return *base_; }
  int steps() const { return base_->steps(); }
  double dt() const { return base_->dt(); }
  double horizon() const { return base_->horizon(); }
  double time_at(int k) const { return base_->times[static_cast<std::size_t>(k)]; }
  int index_of_time(double t) const { return base_->index_of_time(t); }

  int snapshot_index(int k) const {
    return remap_.empty() ? k : remap_[static_cast<std::size_t>(k)];
  }
  const FiniteMeasure& snapshot(int k) const {
    return base_->snapshots[static_cast<std::size_t>(snapshot_index(k))];
  }

 private:
  const MeasurePath* base_;
  std::vector<int> remap_;
};

/// A stopped trajectory (t, omega_t): values follow the grid up to the freeze
/// index and stay frozen from there on. Supports the left-limit variant
/// (pre-stop), vertical bumps acting from the stop time onward, and horizontal
/// extensions that advance the time label while keeping values frozen.
/// Functionals only ever see this type, so they are non-anticipative by
/// construction.
class StoppedPath {
 public:
  StoppedPath(GridPath grid, double label_time, int freeze_idx, int final_idx)
      : grid_(std::move(grid)),
        label_time_(label_time),
        freeze_idx_(freeze_idx),
        final_idx_(final_idx) {}

  double t() const { return label_time_; }
  const GridPath& grid() const { return grid_; }
  double grid_dt() const { return grid_.dt(); }
  double horizon() const { return grid_.horizon(); }
  int freeze_index() const { return freeze_idx_; }
  int final_index() const { return final_idx_; }
  const std::vector<Atom>& overlay() const { return overlay_; }

  /// omega_t evaluated at grid index j (clamped into the grid).
  MeasureRef lookup_index(int j) const {
    const int jc = std::min(std::max(j, 0), grid_.steps());
    const int resolved = jc < freeze_idx_ ? jc : final_idx_;
    const bool bumped = jc >= freeze_idx_ && !overlay_.empty();
    return MeasureRef(grid_.snapshot(resolved), bumped ? overlay_.data() : nullptr,
                      bumped ? static_cast<int>(overlay_.size()) : 0);
  }

  MeasureRef lookup(double u) const { return lookup_index(grid_.index_of_time(u)); }

  /// The frozen value omega_t(t) (left-limit value for pre-stopped paths).
  MeasureRef final_measure() const { return lookup_index(freeze_idx_); }

  void add_overlay(Atom a) { overlay_.push_back(a); }
  void set_label_time(double t) { label_time_ = t; }

 private:
  GridPath grid_;
  double label_time_;
  int freeze_idx_;
  int final_idx_;
  std::vector<Atom> overlay_;
};

/// Stop at the grid index nearest to t (that snapped time becomes the label).
inline StoppedPath stop(const GridPath& gp, double t) {
  const int idx = gp.index_of_time(t);
  return StoppedPath(gp, gp.time_at(idx), idx, idx);
}

inline StoppedPath stop_at_index(const GridPath& gp, int idx) {
  if (idx < 0 || idx > gp.steps()) throw TimeOutOfRangeError("stop_at_index: bad index");
  return StoppedPath(gp, gp.time_at(idx), idx, idx);
}

/// The pair (t, omega_{t-}): values before t are unchanged, the value from t
/// onward is the previous grid snapshot (the left limit on this grid).
inline StoppedPath pre_stop(const GridPath& gp, double t) {
  const int idx = gp.index_of_time(t);
  return StoppedPath(gp, gp.time_at(idx), idx, std::max(idx - 1, 0));
}

/// omega_t + eps * delta_x from the stop time onward.
inline StoppedPath vertical_bump(const StoppedPath& sp, CirclePoint x, double eps) {
  if (!(eps > 0.0)) throw NonPositiveEpsError("vertical_bump: eps must be > 0");
  StoppedPath out = sp;
  out.add_overlay(Atom{x, eps});
  return out;
}

/// The horizontal extension (t + h, omega_t): same frozen values, later label.
inline StoppedPath horizontal_extension(const StoppedPath& sp, double h) {
  if (h < 0.0) throw InvalidParamsError("horizontal_extension: h must be >= 0");
  const double tol = 1e-9 * std::max(1.0, sp.horizon());
  if (sp.t() + h > sp.horizon() + tol)
    throw TimeOutOfRangeError("horizontal_extension: beyond the grid horizon");
  StoppedPath out = sp;
  out.set_label_time(sp.t() + h);
  return out;
}

inline bool measures_equal(const MeasureRef& a, const MeasureRef& b) {
  bool eq = true;
  std::vector<Atom> xs, ys;
  a.for_each_atom([&](const Atom& at) { xs.push_back(at); });
  b.for_each_atom([&](const Atom& at) { ys.push_back(at); });
  if (xs.size() != ys.size()) return false;
  for (std::size_t i = 0; i < xs.size(); ++i)
    eq = eq && xs[i].position.x == ys[i].position.x && xs[i].weight == ys[i].weight;
  return eq;
}

/// Same values at every grid index (time labels not compared).
inline bool lookups_equal(const StoppedPath& a, const StoppedPath& b) {
  if (a.grid().steps() != b.grid().steps()) return false;
  for (int j = 0; j <= a.grid().steps(); ++j) {
    if (!measures_equal(a.lookup_index(j), b.lookup_index(j))) return false;
  }
  return true;
}

inline bool operator==(const StoppedPath& a, const StoppedPath& b) {
  return a.t() == b.t() && lookups_equal(a, b);
}

/// Path-space metric for stopped trajectories:
///   d((t, omega_t), (t', omega'_t')) =
///     max over grid u of weak_distance(omega_t(u), omega'_t'(u)) + |t - t'|.
/// Both arguments must live on the same time grid. Snapshot spectra are cached
/// per call, so the cost is one pass per distinct snapshot plus O(1) per grid
/// point.
inline double path_distance(const StoppedPath& a, const StoppedPath& b) {
  const int L = a.grid().steps();
  if (b.grid().steps() != L || std::fabs(a.grid_dt() - b.grid_dt()) > 1e-12)
    throw InvalidParamsError("path_distance: paths live on different grids");

  std::unordered_map<const FiniteMeasure*, Spectrum> cache;
  auto spec_of = [&cache](const MeasureRef& ref) {
    auto it = cache.find(&ref.base());
    if (it == cache.end()) it = cache.emplace(&ref.base(), spectrum(ref.base())).first;
    if (ref.overlay_count() == 0) return it->second;
    Spectrum sp = it->second;
    for (int i = 0; i < ref.overlay_count(); ++i) {
      const Atom& at = ref.overlay(i);
      sp.mass += at.weight;
      const double th = kTwoPi * at.position.x;
      const double c1 = std::cos(th), s1 = std::sin(th);
      double ck = c1, sk = s1;
      for (int k = 0; k < kWeakModes; ++k) {
        sp.c[static_cast<std::size_t>(k)] += at.weight * ck;
        sp.s[static_cast<std::size_t>(k)] += at.weight * sk;
        const double cn = ck * c1 - sk * s1;
        sk = sk * c1 + ck * s1;
        ck = cn;
      }
    }
    return sp;
  };

  double dmax = 0.0;
  for (int j = 0; j <= L; ++j) {
    const double d = weak_distance(spec_of(a.lookup_index(j)), spec_of(b.lookup_index(j)));
    dmax = std::max(dmax, d);
  }
  return dmax + std::fabs(a.t() - b.t());
}

/// One-sided second-order stencil for the vertical derivative at x:
///   (-3 F + 4 F(bump eps) - F(bump 2 eps)) / (2 eps).
/// Exact on functionals affine or quadratic in the bump size. eps = 0 picks
/// the default 1e-4 * max(1, mass).
template <class F>
double numeric_vertical_derivative(F&& f, const StoppedPath& sp, CirclePoint x,
                                   double eps = 0.0) {
  if (eps == 0.0) eps = 1e-4 * std::max(1.0, sp.final_measure().total_mass());
  if (!(eps > 0.0)) throw NonPositiveEpsError("numeric_vertical_derivative: eps <= 0");
  const double f0 = f(sp);
  const double f1 = f(vertical_bump(sp, x, eps));
  const double f2 = f(vertical_bump(sp, x, 2.0 * eps));
  return (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * eps);
}

/// One-sided second-order stencil for the diagonal second vertical derivative.
template <class F>
double numeric_vertical_second(F&& f, const StoppedPath& sp, CirclePoint x,
                               double eps = 0.0) {
  if (eps == 0.0) eps = 1e-3 * std::max(1.0, sp.final_measure().total_mass());
  if (!(eps > 0.0)) throw NonPositiveEpsError("numeric_vertical_second: eps <= 0");
  const double f0 = f(sp);
  const double f1 = f(vertical_bump(sp, x, eps));
  const double f2 = f(vertical_bump(sp, x, 2.0 * eps));
  const double f3 = f(vertical_bump(sp, x, 3.0 * eps));
  return (2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3) / (eps * eps);
}

/// Mixed second vertical derivative via the four-corner difference
/// (first-order accurate; fallback quality).
template <class F>
double numeric_vertical_mixed(F&& f, const StoppedPath& sp, CirclePoint x, CirclePoint y,
                              double eps = 0.0) {
  if (eps == 0.0) eps = 1e-3 * std::max(1.0, sp.final_measure().total_mass());
  if (!(eps > 0.0)) throw NonPositiveEpsError("numeric_vertical_mixed: eps <= 0");
  const double f0 = f(sp);
  const double fx = f(vertical_bump(sp, x, eps));
  const double fy = f(vertical_bump(sp, y, eps));
  const double fxy = f(vertical_bump(vertical_bump(sp, x, eps), y, eps));
  return (fxy - fx - fy + f0) / (eps * eps);
}

/// Forward difference along the frozen extension. h = 0 picks the grid dt,
/// which is the natural resolution for path-dependent functionals whose
/// running integrals advance at grid crossings.
template <class F>
double numeric_horizontal_derivative(F&& f, const StoppedPath& sp, double h = 0.0) {
  if (h == 0.0) h = sp.grid_dt();
  if (!(h > 0.0)) throw InvalidParamsError("numeric_horizontal_derivative: h <= 0");
  return (f(horizontal_extension(sp, h)) - f(sp)) / h;
}

/// Dyadic mesh on [0, t]: 0, 2^-n, 2*2^-n, ... capped at t (t always last).
inline std::vector<double> dyadic_mesh(int n, double t) {
  if (n < 0 || n > 30) throw InvalidParamsError("dyadic_mesh: n out of range");
  if (!(t >= 0.0)) throw InvalidParamsError("dyadic_mesh: t must be >= 0");
  std::vector<double> mesh;
  const double h = std::ldexp(1.0, -n);
  const double tol = 1e-12 * std::max(1.0, t);
  for (double u = 0.0; u < t - tol; u += h) mesh.push_back(u);
  mesh.push_back(t);
  return mesh;
}

/// Right-endpoint piecewise-constant approximation on the dyadic mesh:
/// value X(tau_{i+1}) on [tau_i, tau_{i+1}), value X(t) from t onward.
/// Mesh times are snapped to the simulation grid.
inline GridPath dyadic_approximation(const GridPath& gp, double t, int n) {
  const int t_idx = gp.index_of_time(t);
  const std::vector<double> mesh = dyadic_mesh(n, gp.time_at(t_idx));
  std::vector<int> mesh_idx(mesh.size());
  for (std::size_t i = 0; i < mesh.size(); ++i) mesh_idx[i] = gp.index_of_time(mesh[i]);

  std::vector<int> remap(static_cast<std::size_t>(gp.steps()) + 1);
  std::size_t cell = 0;  // invariant: time_at(j) < mesh[cell + 1] while j below t
  for (int j = 0; j <= gp.steps(); ++j) {
    if (j >= t_idx) {
      remap[static_cast<std::size_t>(j)] = gp.snapshot_index(t_idx);
      continue;
    }
    while (cell + 2 < mesh_idx.size() && j >= mesh_idx[cell + 1]) ++cell;
    remap[static_cast<std::size_t>(j)] = gp.snapshot_index(mesh_idx[cell + 1]);
  }
  return GridPath(gp.base(), std::move(remap));
}

/// Trajectory bundle on [0, t]: the same data as a stopped path, but lookups
/// beyond t are out of range instead of frozen. Bumping the final slot of the
/// bundle and restricting back reproduces the vertical bump exactly, which is
/// what makes vertical derivatives computable from bundle data alone.
class BundlePath {
 public:
  explicit BundlePath(StoppedPath inner) : inner_(std::move(inner)) {}

  double t() const { return inner_.t(); }

  MeasureRef lookup(double u) const {
    const double tol = 1e-9 * std::max(1.0, inner_.horizon());
    if (u > inner_.t() + tol) throw TimeOutOfRangeError("BundlePath: lookup beyond t");
    return inner_.lookup(u);
  }

  MeasureRef final_measure() const { return inner_.final_measure(); }
  const StoppedPath& inner() const { return inner_; }

 private:
  StoppedPath inner_;
};

inline BundlePath bundle_project(const StoppedPath& sp) { return BundlePath(sp); }

inline StoppedPath bundle_restrict(const BundlePath& bp) { return bp.inner(); }

/// Add eps * delta_x to the bundle's final time slot.
inline BundlePath bundle_bump(const BundlePath& bp, CirclePoint x, double eps) {
  return BundlePath(vertical_bump(bp.inner(), x, eps));
}

/// Final-slot derivative of f on the bundle; runs the exact same arithmetic
/// as numeric_vertical_derivative on the corresponding stopped path.
template <class F>
double bundle_vertical_derivative(F&& f, const BundlePath& bp, CirclePoint x,
                                  double eps = 0.0) {
  auto on_stopped = [&f](const StoppedPath& sp) { return f(bundle_project(sp)); };
  return numeric_vertical_derivative(on_stopped, bp.inner(), x, eps);
}

}  // namespace mvlab
