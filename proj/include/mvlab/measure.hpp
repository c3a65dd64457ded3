#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "mvlab/circle.hpp"
#include "mvlab/errors.hpp"
#include "mvlab/fourier.hpp"

namespace mvlab {

struct Atom {
  CirclePoint position;
  double weight{0.0};
};

/// Finite atomic measure on the circle. Weights are strictly positive
/// (zero-weight atoms are dropped at construction); the zero measure is the
/// empty atom list. Atoms may coincide, no merging happens.
class FiniteMeasure {
 public:
  FiniteMeasure() = default;

  explicit FiniteMeasure(std::vector<Atom> atoms) {
    atoms_.reserve(atoms.size());
    for (const Atom& a : atoms) {
      if (a.weight < 0.0) throw InvalidParamsError("FiniteMeasure: negative atom weight");
      if (a.weight == 0.0) continue;
      atoms_.push_back(a);
      mass_ += a.weight;
    }
  }

  /// N atoms of equal weight w at the given positions (already wrapped).
  static FiniteMeasure equal_weights(const std::vector<double>& xs, double w) {
    if (w < 0.0) throw InvalidParamsError("FiniteMeasure: negative atom weight");
    FiniteMeasure m;
    if (w == 0.0) return m;
    m.atoms_.reserve(xs.size());
    for (double x : xs) m.atoms_.push_back(Atom{CirclePoint{x}, w});
    m.mass_ = w * static_cast<double>(xs.size());
    return m;
  }

  const std::vector<Atom>& atoms() const { return atoms_; }
  double total_mass() const { return mass_; }
  bool is_zero() const { return atoms_.empty(); }

 private:
  std::vector<Atom> atoms_;
  double mass_{0.0};
};

/// mu + eps * delta_x. Rejects eps <= 0.
inline FiniteMeasure bump(const FiniteMeasure& mu, CirclePoint x, double eps) {
  if (!(eps > 0.0)) throw NonPositiveEpsError("bump: eps must be > 0");
  std::vector<Atom> atoms = mu.atoms();
  atoms.push_back(Atom{x, eps});
  return FiniteMeasure(std::move(atoms));
}

/// Non-owning view of a measure plus up to a handful of overlay atoms.
/// Lets path lookups expose bumped measures without copying atom vectors.
class MeasureRef {
 public:
  MeasureRef(const FiniteMeasure& base)  // NOLINT: implicit by design
      : base_(&base), extra_(nullptr), n_extra_(0) {}
  MeasureRef(const FiniteMeasure& base, const Atom* extra, int n_extra)
      : base_(&base), extra_(extra), n_extra_(n_extra) {}

  const FiniteMeasure& base() const { return *base_; }
  int overlay_count() const { return n_extra_; }
  const Atom& overlay(int i) const { return extra_[i]; }

  double total_mass() const {
    double m = base_->total_mass();
    for (int i = 0; i < n_extra_; ++i) m += extra_[i].weight;
    return m;
  }

  bool is_zero() const { return base_->is_zero() && n_extra_ == 0; }

  template <class Fn>
  void for_each_atom(Fn&& fn) const {
    for (const Atom& a : base_->atoms()) fn(a);
    for (int i = 0; i < n_extra_; ++i) fn(extra_[i]);
  }

 private:
  const FiniteMeasure* base_;
  const Atom* extra_;
  int n_extra_;
};

/// <mu, phi> = sum_atoms w * phi(x).
inline double integrate(const MeasureRef& mu, const FourierField& phi) {
  double s = 0.0;
  mu.for_each_atom([&](const Atom& a) { s += a.weight * eval_field(phi, a.position); });
  return s;
}

template <class Fn>
inline double integrate_fn(const MeasureRef& mu, Fn&& phi) {
  double s = 0.0;
  mu.for_each_atom([&](const Atom& a) { s += a.weight * phi(a.position); });
  return s;
}

/// Number of proxy modes in the weak-topology distance below. Fixed by the
/// metric's definition, independent of any field's mode count.
inline constexpr int kWeakModes = 16;

/// Cached trigonometric moments of a measure: total mass plus
/// <mu, cos 2 pi k x> and <mu, sin 2 pi k x> for k = 1..16.
struct Spectrum {
  double mass{0.0};
  std::array<double, kWeakModes> c{};
  std::array<double, kWeakModes> s{};
};

inline Spectrum spectrum(const MeasureRef& mu) {
  Spectrum sp;
  mu.for_each_atom([&](const Atom& a) {
    sp.mass += a.weight;
    const double th = kTwoPi * a.position.x;
    const double c1 = std::cos(th), s1 = std::sin(th);
    double ck = c1, sk = s1;
    for (int k = 0; k < kWeakModes; ++k) {
      sp.c[k] += a.weight * ck;
      sp.s[k] += a.weight * sk;
      const double cn = ck * c1 - sk * s1;
      sk = sk * c1 + ck * s1;
      ck = cn;
    }
  });
  return sp;
}

inline double weak_distance(const Spectrum& a, const Spectrum& b) {
  double d = std::fabs(a.mass - b.mass);
  double scale = 0.5;
  for (int k = 0; k < kWeakModes; ++k) {
    d += scale * (std::fabs(a.c[k] - b.c[k]) + std::fabs(a.s[k] - b.s[k]));
    scale *= 0.5;
  }
  return d;
}

/// Fourier-mode proxy for the weak topology:
///   d(mu, nu) = |mu(E) - nu(E)|
///             + sum_{k=1..16} 2^-k (|<mu-nu, cos 2 pi k x>| + |<mu-nu, sin 2 pi k x>|).
/// Metrizes weak convergence on trigonometric test functions; equivalent in
/// effect to a Prokhorov-type metric for the diagnostics here.
inline double weak_distance(const MeasureRef& a, const MeasureRef& b) {
  return weak_distance(spectrum(a), spectrum(b));
}

}  // namespace mvlab
