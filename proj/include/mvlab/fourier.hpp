#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <vector>

#include "mvlab/circle.hpp"
#include "mvlab/errors.hpp"

namespace mvlab {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Truncated Fourier series on the circle:
///   phi(x) = a0 + sum_{k=1..K} ac[k-1]*cos(2 pi k x) + as[k-1]*sin(2 pi k x).
struct FourierField {
  double a0{0.0};
  std::vector<double> ac;
  std::vector<double> as;

  FourierField() = default;
  explicit FourierField(int modes) : ac(modes, 0.0), as(modes, 0.0) {
    if (modes < 0) throw InvalidParamsError("FourierField: negative mode count");
  }

  int modes() const { return static_cast<int>(ac.size()); }

  void resize_modes(int modes) {
    ac.resize(modes, 0.0);
    as.resize(modes, 0.0);
  }
};

inline FourierField constant_field(double v) {
  FourierField f;
  f.a0 = v;
  return f;
}

inline FourierField cos_field(int k, double amplitude) {
  if (k < 1) throw InvalidParamsError("cos_field: mode must be >= 1");
  FourierField f(k);
  f.ac[k - 1] = amplitude;
  return f;
}

inline FourierField sin_field(int k, double amplitude) {
  if (k < 1) throw InvalidParamsError("sin_field: mode must be >= 1");
  FourierField f(k);
  f.as[k - 1] = amplitude;
  return f;
}

/// Evaluate via the angle-addition recurrence: one sincos per call,
/// then cos((k+1)t) = cos(kt)cos(t) - sin(kt)sin(t) and likewise for sin.
inline double eval_field(const FourierField& f, CirclePoint p) {
  double out = f.a0;
  const int K = f.modes();
  if (K == 0) return out;
  const double th = kTwoPi * p.x;
  const double c1 = std::cos(th), s1 = std::sin(th);
  double ck = c1, sk = s1;
  for (int k = 0; k < K; ++k) {
    out += f.ac[k] * ck + f.as[k] * sk;
    const double cn = ck * c1 - sk * s1;
    sk = sk * c1 + ck * s1;
    ck = cn;
  }
  return out;
}

/// A = (1/2) d^2/dx^2, diagonal on modes: coefficient k scales by -(1/2)(2 pi k)^2.
/// The constant part is annihilated.
inline FourierField apply_generator(const FourierField& f) {
  FourierField g = f;
  g.a0 = 0.0;
  for (int k = 1; k <= f.modes(); ++k) {
    const double lam = -0.5 * (kTwoPi * k) * (kTwoPi * k);
    g.ac[k - 1] *= lam;
    g.as[k - 1] *= lam;
  }
  return g;
}

/// Cheap uniform bound: sup |phi| <= |a0| + sum (|ac_k| + |as_k|).
inline double sup_bound(const FourierField& f) {
  double b = std::fabs(f.a0);
  for (double v : f.ac) b += std::fabs(v);
  for (double v : f.as) b += std::fabs(v);
  return b;
}

/// dst += coeff * src, growing dst's mode count if needed.
inline void axpy(FourierField& dst, double coeff, const FourierField& src) {
  if (src.modes() > dst.modes()) dst.resize_modes(src.modes());
  dst.a0 += coeff * src.a0;
  for (int k = 0; k < src.modes(); ++k) {
    dst.ac[k] += coeff * src.ac[k];
    dst.as[k] += coeff * src.as[k];
  }
}

inline FourierField scaled(const FourierField& f, double coeff) {
  FourierField g = f;
  g.a0 *= coeff;
  for (auto& v : g.ac) v *= coeff;
  for (auto& v : g.as) v *= coeff;
  return g;
}

inline FourierField added(const FourierField& a, const FourierField& b) {
  FourierField g = a;
  axpy(g, 1.0, b);
  return g;
}

/// Least-squares projection of a sampled function onto `modes` Fourier modes,
/// using a uniform collocation grid. On a uniform grid the normal equations
/// diagonalize, so this is the plain discrete Fourier sum. Exact whenever the
/// sampled function is a trigonometric polynomial of degree d with
/// d + modes < grid_points.
inline FourierField project_field(const std::function<double(double)>& fn, int modes,
                                  int grid_points) {
  if (modes < 0 || grid_points < 2 * modes + 1)
    throw InvalidParamsError("project_field: need grid_points >= 2*modes+1");
  std::vector<double> vals(grid_points);
  for (int j = 0; j < grid_points; ++j) vals[j] = fn(static_cast<double>(j) / grid_points);
  FourierField out(modes);
  double s0 = 0.0;
  for (double v : vals) s0 += v;
  out.a0 = s0 / grid_points;
  for (int k = 1; k <= modes; ++k) {
    double sc = 0.0, ss = 0.0;
    const double th = kTwoPi * k / grid_points;
    const double c1 = std::cos(th), s1 = std::sin(th);
    double ck = 1.0, sk = 0.0;  // cos/sin of (2 pi k j / M), starting at j = 0
    for (int j = 0; j < grid_points; ++j) {
      sc += vals[j] * ck;
      ss += vals[j] * sk;
      const double cn = ck * c1 - sk * s1;
      sk = sk * c1 + ck * s1;
      ck = cn;
    }
    out.ac[k - 1] = 2.0 * sc / grid_points;
    out.as[k - 1] = 2.0 * ss / grid_points;
  }
  return out;
}

/// Pointwise product projected back onto `modes` modes via a 4x-oversampled
/// collocation grid. Exact (no aliasing) when deg(a) + deg(b) + modes < 4*modes,
/// which holds for deg <= modes operands.
inline FourierField multiply_projected(const FourierField& a, const FourierField& b,
                                       int modes) {
  const int need = a.modes() + b.modes() + modes + 1;
  const int grid = std::max(4 * std::max(modes, 1), need);
  return project_field(
      [&](double x) {
        CirclePoint p{x};
        return eval_field(a, p) * eval_field(b, p);
      },
      modes, grid);
}

}  // namespace mvlab
