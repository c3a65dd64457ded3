#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mvlab/errors.hpp"
#include "mvlab/fourier.hpp"
#include "mvlab/measure.hpp"
#include "mvlab/pathspace.hpp"

namespace mvlab {

/// Increments of the four Ito-formula terms over one grid step [t_k, t_{k+1}].
struct ItoStepIncrements {
  double time_term{0.0};
  double gen_term{0.0};
  double quad_term{0.0};
  double mart_term{0.0};
};

/// Per-step term source for one path. Families with closed-form derivatives
/// return cached-table providers (O(1) per step after one pass over the path);
/// the generic provider differentiates eval numerically and is meant for
/// small-scale checks only.
class ItoTermProvider {
 public:
  virtual ~ItoTermProvider() = default;
  virtual ItoStepIncrements step(int k) = 0;
  virtual bool analytic() const = 0;
};

/// Left Riemann sum of <omega(u), psi> du over [0, t), partial last cell
/// interpolated so the value grows linearly along frozen extensions.
inline double running_integral(const StoppedPath& sp, const FourierField& psi) {
  const double dt = sp.grid_dt();
  const double tol = 1e-9 * std::max(1.0, sp.horizon());
  double z = 0.0;
  int k = 0;
  while ((k + 1) * dt <= sp.t() + tol && k < sp.grid().steps()) {
    z += dt * integrate(sp.lookup_index(k), psi);
    ++k;
  }
  const double rem = sp.t() - k * dt;
  if (rem > tol) z += rem * integrate(sp.lookup_index(k), psi);
  return z;
}

/// A non-anticipative functional F(t, omega_t) of stopped trajectories.
///
/// Only eval is mandatory. The derivative members default to the numeric
/// stencils of the path-space layer; families with closed forms override them
/// and set has_analytic_derivatives. vertical2 and vertical3 canonicalize the
/// argument order before dispatch, so symmetry holds bitwise for every
/// implementation.
class Functional {
 public:
  virtual ~Functional() = default;

  virtual std::string name() const = 0;
  virtual double eval(const StoppedPath& sp) const = 0;

  virtual bool has_analytic_derivatives() const { return false; }
  virtual bool is_martingale() const { return false; }
  /// True when F depends on the trajectory only through (t, omega(t)).
  virtual bool is_state() const { return false; }

  virtual double vertical(const StoppedPath& sp, CirclePoint x) const {
    auto f = [this](const StoppedPath& s) { return eval(s); };
    return numeric_vertical_derivative(f, sp, x);
  }

  double vertical2(const StoppedPath& sp, CirclePoint x, CirclePoint y) const {
    if (y.x < x.x) std::swap(x, y);
    return vertical2_ordered(sp, x, y);
  }

  double vertical3(const StoppedPath& sp, CirclePoint x, CirclePoint y,
                   CirclePoint z) const {
    if (y.x < x.x) std::swap(x, y);
    if (z.x < y.x) std::swap(y, z);
    if (y.x < x.x) std::swap(x, y);
    return vertical3_ordered(sp, x, y, z);
  }

  virtual double horizontal(const StoppedPath& sp) const {
    auto f = [this](const StoppedPath& s) { return eval(s); };
    return numeric_horizontal_derivative(f, sp);
  }

  /// (A applied to the vertical-derivative field)(x).
  virtual double generator_vertical(const StoppedPath& sp, CirclePoint x) const {
    return eval_field(apply_generator(vertical_field(sp)), x);
  }

  /// The map x -> vertical(sp, x) as a FourierField; exact for analytic
  /// families, collocation-projected otherwise.
  virtual FourierField vertical_field(const StoppedPath& sp) const {
    const int modes = 16;
    auto fn = [this, &sp](double x) { return vertical(sp, circle_point(x)); };
    return project_field(fn, modes, 4 * modes + 1);
  }

  virtual std::unique_ptr<ItoTermProvider> make_provider(const GridPath& gp) const;

 protected:
  virtual double vertical2_ordered(const StoppedPath& sp, CirclePoint x,
                                   CirclePoint y) const {
    auto f = [this](const StoppedPath& s) { return eval(s); };
    if (x.x == y.x) return numeric_vertical_second(f, sp, x);
    return numeric_vertical_mixed(f, sp, x, y);
  }

  virtual double vertical3_ordered(const StoppedPath&, CirclePoint, CirclePoint,
                                   CirclePoint) const {
    throw Error("vertical3: no analytic third derivative for this functional");
  }
};

/// Numeric-fallback provider: derivatives of eval by stencils, the vertical
/// field by collocation projection, the quadratic term by a per-atom diagonal
/// sweep. Cost per step is O(atoms * evals); use at test scale.
class GenericItoProvider final : public ItoTermProvider {
 public:
  GenericItoProvider(const Functional& f, GridPath gp)
      : f_(f), gp_(std::move(gp)), dt_(gp_.dt()), c_(gp_.base().params.c) {}

  ItoStepIncrements step(int k) override {
    const StoppedPath sp = stop_at_index(gp_, k);
    const FourierField g = f_.vertical_field(sp);
    const FourierField ag = apply_generator(g);
    const FiniteMeasure& xk = gp_.snapshot(k);
    const FiniteMeasure& xk1 = gp_.snapshot(k + 1);

    ItoStepIncrements inc;
    inc.time_term = f_.horizontal(sp) * dt_;
    inc.gen_term = integrate(xk, ag) * dt_;
    double diag = 0.0;
    for (const Atom& a : xk.atoms())
      diag += a.weight * f_.vertical2(sp, a.position, a.position);
    inc.quad_term = 0.5 * c_ * diag * dt_;
    inc.mart_term = integrate(xk1, g) - integrate(xk, g) - dt_ * integrate(xk, ag);
    return inc;
  }

  bool analytic() const override { return false; }

 private:
  const Functional& f_;
  GridPath gp_;
  double dt_;
  double c_;
};

inline std::unique_ptr<ItoTermProvider> Functional::make_provider(
    const GridPath& gp) const {
  return std::make_unique<GenericItoProvider>(*this, gp);
}

/// Outer function bundle for finitely based state functionals
/// f(t, y_1..y_n). Partials are supplied as callables; d3 may be left empty
/// when the family has no third-derivative use.
struct StateOuter {
  std::function<double(double, const std::vector<double>&)> f;
  std::function<double(double, const std::vector<double>&)> df_dt;
  std::function<double(int, double, const std::vector<double>&)> d1;
  std::function<double(int, int, double, const std::vector<double>&)> d2;
  std::function<double(int, int, int, double, const std::vector<double>&)> d3;
  std::string label;
};

/// F(t, omega) = f(t, <omega(t), phi_1>, ..., <omega(t), phi_n>).
class CylindricalState final : public Functional {
 public:
  CylindricalState(StateOuter outer, std::vector<FourierField> fields)
      : outer_(std::move(outer)), fields_(std::move(fields)) {
    if (fields_.empty()) throw InvalidParamsError("CylindricalState: no base fields");
    if (!outer_.f || !outer_.df_dt || !outer_.d1 || !outer_.d2)
      throw InvalidParamsError("CylindricalState: incomplete outer bundle");
  }

  std::string name() const override { return outer_.label; }
  bool has_analytic_derivatives() const override { return true; }
  bool is_state() const override { return true; }

  std::vector<double> coordinates(const StoppedPath& sp) const {
    std::vector<double> y(fields_.size());
    const MeasureRef m = sp.final_measure();
    for (std::size_t i = 0; i < fields_.size(); ++i) y[i] = integrate(m, fields_[i]);
    return y;
  }

  double eval(const StoppedPath& sp) const override {
    return outer_.f(sp.t(), coordinates(sp));
  }

  double vertical(const StoppedPath& sp, CirclePoint x) const override {
    const std::vector<double> y = coordinates(sp);
    double v = 0.0;
    for (std::size_t i = 0; i < fields_.size(); ++i)
      v += outer_.d1(static_cast<int>(i), sp.t(), y) * eval_field(fields_[i], x);
    return v;
  }

  double horizontal(const StoppedPath& sp) const override {
    return outer_.df_dt(sp.t(), coordinates(sp));
  }

  double generator_vertical(const StoppedPath& sp, CirclePoint x) const override {
    const std::vector<double> y = coordinates(sp);
    double v = 0.0;
    for (std::size_t i = 0; i < fields_.size(); ++i)
      v += outer_.d1(static_cast<int>(i), sp.t(), y) *
           eval_field(apply_generator(fields_[i]), x);
    return v;
  }

  FourierField vertical_field(const StoppedPath& sp) const override {
    const std::vector<double> y = coordinates(sp);
    FourierField g = constant_field(0.0);
    for (std::size_t i = 0; i < fields_.size(); ++i)
      axpy(g, outer_.d1(static_cast<int>(i), sp.t(), y), fields_[i]);
    return g;
  }

  std::unique_ptr<ItoTermProvider> make_provider(const GridPath& gp) const override;

  const std::vector<FourierField>& fields() const { return fields_; }
  const StateOuter& outer() const { return outer_; }

 protected:
  double vertical2_ordered(const StoppedPath& sp, CirclePoint x,
                           CirclePoint y) const override {
    const std::vector<double> yy = coordinates(sp);
    double v = 0.0;
    for (std::size_t i = 0; i < fields_.size(); ++i)
      for (std::size_t j = 0; j < fields_.size(); ++j)
        v += outer_.d2(static_cast<int>(i), static_cast<int>(j), sp.t(), yy) *
             eval_field(fields_[i], x) * eval_field(fields_[j], y);
    return v;
  }

  double vertical3_ordered(const StoppedPath& sp, CirclePoint x, CirclePoint y,
                           CirclePoint z) const override {
    if (!outer_.d3) throw Error("vertical3: outer bundle has no third partials");
    const std::vector<double> yy = coordinates(sp);
    double v = 0.0;
    const int n = static_cast<int>(fields_.size());
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int l = 0; l < n; ++l)
          v += outer_.d3(i, j, l, sp.t(), yy) *
               eval_field(fields_[static_cast<std::size_t>(i)], x) *
               eval_field(fields_[static_cast<std::size_t>(j)], y) *
               eval_field(fields_[static_cast<std::size_t>(l)], z);
    return v;
  }

 private:
  StateOuter outer_;
  std::vector<FourierField> fields_;
};

/// Cached-table provider for CylindricalState: one pass over the path builds
/// <X_j, phi_i>, <X_j, A phi_i> and the pairwise products, then every step is
/// O(n^2) scalar work.
class CylindricalStateProvider final : public ItoTermProvider {
 public:
  CylindricalStateProvider(const CylindricalState& f, GridPath gp)
      : f_(f), gp_(std::move(gp)), dt_(gp_.dt()), c_(gp_.base().params.c) {
    const std::size_t n = f_.fields().size();
    std::vector<FourierField> gen_fields(n);
    products_.resize(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      gen_fields[i] = apply_generator(f_.fields()[i]);
      for (std::size_t j = 0; j < n; ++j) {
        const FourierField& a = f_.fields()[i];
        const FourierField& b = f_.fields()[j];
        products_[i * n + j] =
            multiply_projected(a, b, std::max(1, a.modes() + b.modes()));
      }
    }
    const int L = gp_.steps();
    y_.assign(static_cast<std::size_t>(L + 1) * n, 0.0);
    ay_.assign(static_cast<std::size_t>(L + 1) * n, 0.0);
    q_.assign(static_cast<std::size_t>(L + 1) * n * n, 0.0);
    for (int j = 0; j <= L; ++j) {
      const FiniteMeasure& x = gp_.snapshot(j);
      for (std::size_t i = 0; i < n; ++i) {
        y_[static_cast<std::size_t>(j) * n + i] = integrate(x, f_.fields()[i]);
        ay_[static_cast<std::size_t>(j) * n + i] = integrate(x, gen_fields[i]);
      }
      for (std::size_t i = 0; i < n * n; ++i)
        q_[static_cast<std::size_t>(j) * n * n + i] = integrate(x, products_[i]);
    }
  }

  ItoStepIncrements step(int k) override {
    const std::size_t n = f_.fields().size();
    const double tk = gp_.time_at(k);
    std::vector<double> yk(y_.begin() + static_cast<std::ptrdiff_t>(k * n),
                           y_.begin() + static_cast<std::ptrdiff_t>((k + 1) * n));
    const StateOuter& o = f_.outer();

    ItoStepIncrements inc;
    inc.time_term = o.df_dt(tk, yk) * dt_;
    for (std::size_t i = 0; i < n; ++i) {
      const double di = o.d1(static_cast<int>(i), tk, yk);
      inc.gen_term += di * ay_[static_cast<std::size_t>(k) * n + i] * dt_;
      inc.mart_term += di * (y_[static_cast<std::size_t>(k + 1) * n + i] -
                             y_[static_cast<std::size_t>(k) * n + i] -
                             dt_ * ay_[static_cast<std::size_t>(k) * n + i]);
      for (std::size_t j = 0; j < n; ++j)
        inc.quad_term += 0.5 * c_ * dt_ *
                         o.d2(static_cast<int>(i), static_cast<int>(j), tk, yk) *
                         q_[(static_cast<std::size_t>(k) * n + i) * n + j];
    }
    return inc;
  }

  bool analytic() const override { return true; }

 private:
  const CylindricalState& f_;
  GridPath gp_;
  double dt_;
  double c_;
  std::vector<FourierField> products_;
  std::vector<double> y_, ay_, q_;
};

inline std::unique_ptr<ItoTermProvider> CylindricalState::make_provider(
    const GridPath& gp) const {
  return std::make_unique<CylindricalStateProvider>(*this, gp);
}

/// Outer bundle for path functionals g(t, y, z) with
/// y = <omega(t), phi> and z = integral of <omega(s), psi> ds over [0, t).
struct PathOuter {
  std::function<double(double, double, double)> g;
  std::function<double(double, double, double)> dg_dt;
  std::function<double(double, double, double)> dg_dy;
  std::function<double(double, double, double)> dg_dyy;
  std::function<double(double, double, double)> dg_dz;
  std::function<double(double, double, double)> dg_dyyy;
  std::string label;
};

/// F(t, omega) = g(t, <omega(t), phi>, int_0^t <omega(s), psi> ds).
/// Genuinely path dependent through z, with closed-form derivatives:
/// vertical = dg_dy * phi(x), horizontal = dg_dt + dg_dz * <omega(t), psi>.
class CylindricalPath final : public Functional {
 public:
  CylindricalPath(PathOuter outer, FourierField phi, FourierField psi)
      : outer_(std::move(outer)), phi_(std::move(phi)), psi_(std::move(psi)) {
    if (!outer_.g || !outer_.dg_dt || !outer_.dg_dy || !outer_.dg_dyy || !outer_.dg_dz)
      throw InvalidParamsError("CylindricalPath: incomplete outer bundle");
  }

  std::string name() const override { return outer_.label; }
  bool has_analytic_derivatives() const override { return true; }

  double eval(const StoppedPath& sp) const override {
    return outer_.g(sp.t(), integrate(sp.final_measure(), phi_),
                    running_integral(sp, psi_));
  }

  double vertical(const StoppedPath& sp, CirclePoint x) const override {
    return outer_.dg_dy(sp.t(), integrate(sp.final_measure(), phi_),
                        running_integral(sp, psi_)) *
           eval_field(phi_, x);
  }

  double horizontal(const StoppedPath& sp) const override {
    const double t = sp.t();
    const double y = integrate(sp.final_measure(), phi_);
    const double z = running_integral(sp, psi_);
    return outer_.dg_dt(t, y, z) +
           outer_.dg_dz(t, y, z) * integrate(sp.final_measure(), psi_);
  }

  double generator_vertical(const StoppedPath& sp, CirclePoint x) const override {
    return outer_.dg_dy(sp.t(), integrate(sp.final_measure(), phi_),
                        running_integral(sp, psi_)) *
           eval_field(apply_generator(phi_), x);
  }

  FourierField vertical_field(const StoppedPath& sp) const override {
    return scaled(phi_, outer_.dg_dy(sp.t(), integrate(sp.final_measure(), phi_),
                                     running_integral(sp, psi_)));
  }

  std::unique_ptr<ItoTermProvider> make_provider(const GridPath& gp) const override;

  const FourierField& phi() const { return phi_; }
  const FourierField& psi() const { return psi_; }
  const PathOuter& outer() const { return outer_; }

 protected:
  double vertical2_ordered(const StoppedPath& sp, CirclePoint x,
                           CirclePoint y) const override {
    return outer_.dg_dyy(sp.t(), integrate(sp.final_measure(), phi_),
                         running_integral(sp, psi_)) *
           eval_field(phi_, x) * eval_field(phi_, y);
  }

  double vertical3_ordered(const StoppedPath& sp, CirclePoint x, CirclePoint y,
                           CirclePoint z) const override {
    if (!outer_.dg_dyyy) throw Error("vertical3: outer bundle has no third partial");
    return outer_.dg_dyyy(sp.t(), integrate(sp.final_measure(), phi_),
                          running_integral(sp, psi_)) *
           eval_field(phi_, x) * eval_field(phi_, y) * eval_field(phi_, z);
  }

 private:
  PathOuter outer_;
  FourierField phi_;
  FourierField psi_;
};

class CylindricalPathProvider final : public ItoTermProvider {
 public:
  CylindricalPathProvider(const CylindricalPath& f, GridPath gp)
      : f_(f), gp_(std::move(gp)), dt_(gp_.dt()), c_(gp_.base().params.c) {
    const FourierField aphi = apply_generator(f_.phi());
    const FourierField phi2 = multiply_projected(
        f_.phi(), f_.phi(), std::max(1, 2 * f_.phi().modes()));
    const int L = gp_.steps();
    y_.resize(static_cast<std::size_t>(L) + 1);
    ay_.resize(static_cast<std::size_t>(L) + 1);
    q_.resize(static_cast<std::size_t>(L) + 1);
    p_.resize(static_cast<std::size_t>(L) + 1);
    z_.resize(static_cast<std::size_t>(L) + 1);
    double z = 0.0;
    for (int j = 0; j <= L; ++j) {
      const FiniteMeasure& x = gp_.snapshot(j);
      y_[static_cast<std::size_t>(j)] = integrate(x, f_.phi());
      ay_[static_cast<std::size_t>(j)] = integrate(x, aphi);
      q_[static_cast<std::size_t>(j)] = integrate(x, phi2);
      p_[static_cast<std::size_t>(j)] = integrate(x, f_.psi());
      z_[static_cast<std::size_t>(j)] = z;
      z += dt_ * p_[static_cast<std::size_t>(j)];
    }
  }

  ItoStepIncrements step(int k) override {
    const auto ku = static_cast<std::size_t>(k);
    const double tk = gp_.time_at(k);
    const double y = y_[ku], z = z_[ku];
    const PathOuter& o = f_.outer();

    ItoStepIncrements inc;
    inc.time_term = (o.dg_dt(tk, y, z) + o.dg_dz(tk, y, z) * p_[ku]) * dt_;
    const double gy = o.dg_dy(tk, y, z);
    inc.gen_term = gy * ay_[ku] * dt_;
    inc.quad_term = 0.5 * c_ * o.dg_dyy(tk, y, z) * q_[ku] * dt_;
    inc.mart_term = gy * (y_[ku + 1] - y - dt_ * ay_[ku]);
    return inc;
  }

  bool analytic() const override { return true; }

 private:
  const CylindricalPath& f_;
  GridPath gp_;
  double dt_;
  double c_;
  std::vector<double> y_, ay_, q_, p_, z_;
};

inline std::unique_ptr<ItoTermProvider> CylindricalPath::make_provider(
    const GridPath& gp) const {
  return std::make_unique<CylindricalPathProvider>(*this, gp);
}

// Factories for the standard test families.

/// F = <omega(t), phi>.
inline std::shared_ptr<Functional> make_linear(FourierField phi,
                                               std::string label = "linear") {
  StateOuter o;
  o.f = [](double, const std::vector<double>& y) { return y[0]; };
  o.df_dt = [](double, const std::vector<double>&) { return 0.0; };
  o.d1 = [](int, double, const std::vector<double>&) { return 1.0; };
  o.d2 = [](int, int, double, const std::vector<double>&) { return 0.0; };
  o.d3 = [](int, int, int, double, const std::vector<double>&) { return 0.0; };
  o.label = std::move(label);
  return std::make_shared<CylindricalState>(std::move(o),
                                            std::vector<FourierField>{std::move(phi)});
}

/// F = <omega(t), phi>^2.
inline std::shared_ptr<Functional> make_quadratic(FourierField phi,
                                                  std::string label = "quadratic") {
  StateOuter o;
  o.f = [](double, const std::vector<double>& y) { return y[0] * y[0]; };
  o.df_dt = [](double, const std::vector<double>&) { return 0.0; };
  o.d1 = [](int, double, const std::vector<double>& y) { return 2.0 * y[0]; };
  o.d2 = [](int, int, double, const std::vector<double>&) { return 2.0; };
  o.d3 = [](int, int, int, double, const std::vector<double>&) { return 0.0; };
  o.label = std::move(label);
  return std::make_shared<CylindricalState>(std::move(o),
                                            std::vector<FourierField>{std::move(phi)});
}

/// F = exp(-<omega(t), phi>).
inline std::shared_ptr<Functional> make_exp_state(FourierField phi,
                                                  std::string label = "exp-state") {
  StateOuter o;
  o.f = [](double, const std::vector<double>& y) { return std::exp(-y[0]); };
  o.df_dt = [](double, const std::vector<double>&) { return 0.0; };
  o.d1 = [](int, double, const std::vector<double>& y) { return -std::exp(-y[0]); };
  o.d2 = [](int, int, double, const std::vector<double>& y) { return std::exp(-y[0]); };
  o.d3 = [](int, int, int, double, const std::vector<double>& y) {
    return -std::exp(-y[0]);
  };
  o.label = std::move(label);
  return std::make_shared<CylindricalState>(std::move(o),
                                            std::vector<FourierField>{std::move(phi)});
}

/// F = t * <omega(t), phi>.
inline std::shared_ptr<Functional> make_time_linear(FourierField phi,
                                                    std::string label = "time-linear") {
  StateOuter o;
  o.f = [](double t, const std::vector<double>& y) { return t * y[0]; };
  o.df_dt = [](double, const std::vector<double>& y) { return y[0]; };
  o.d1 = [](int, double t, const std::vector<double>&) { return t; };
  o.d2 = [](int, int, double, const std::vector<double>&) { return 0.0; };
  o.d3 = [](int, int, int, double, const std::vector<double>&) { return 0.0; };
  o.label = std::move(label);
  return std::make_shared<CylindricalState>(std::move(o),
                                            std::vector<FourierField>{std::move(phi)});
}

/// F = <omega(t), phi> * int_0^t <omega(s), psi> ds.
inline std::shared_ptr<Functional> make_product_path(FourierField phi, FourierField psi,
                                                     std::string label = "product-path") {
  PathOuter o;
  o.g = [](double, double y, double z) { return y * z; };
  o.dg_dt = [](double, double, double) { return 0.0; };
  o.dg_dy = [](double, double, double z) { return z; };
  o.dg_dyy = [](double, double, double) { return 0.0; };
  o.dg_dz = [](double, double y, double) { return y; };
  o.dg_dyyy = [](double, double, double) { return 0.0; };
  o.label = std::move(label);
  return std::make_shared<CylindricalPath>(std::move(o), std::move(phi), std::move(psi));
}

/// F = int_0^t <omega(s), psi> ds (pure running integral, no vertical part).
inline std::shared_ptr<Functional> make_running_integral(
    FourierField psi, std::string label = "running-integral") {
  PathOuter o;
  o.g = [](double, double, double z) { return z; };
  o.dg_dt = [](double, double, double) { return 0.0; };
  o.dg_dy = [](double, double, double) { return 0.0; };
  o.dg_dyy = [](double, double, double) { return 0.0; };
  o.dg_dz = [](double, double, double) { return 1.0; };
  o.dg_dyyy = [](double, double, double) { return 0.0; };
  o.label = std::move(label);
  return std::make_shared<CylindricalPath>(std::move(o), constant_field(1.0),
                                           std::move(psi));
}

}  // namespace mvlab
