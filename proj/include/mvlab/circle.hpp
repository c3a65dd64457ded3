#pragma once

#include <cmath>

namespace mvlab {

/// Point on the unit circle, parametrized by x in [0, 1).
struct CirclePoint {
  double x{0.0};
};

/// Wrap a real number into [0, 1).
inline double wrap_unit(double v) {
  double w = v - std::floor(v);
  // floor can leave w == 1.0 when v is a negative number rounding up.
  if (w >= 1.0) w -= 1.0;
  return w;
}

inline CirclePoint circle_point(double v) { return CirclePoint{wrap_unit(v)}; }

/// Arc-length metric: min(|x-y|, 1-|x-y|).
inline double circle_distance(CirclePoint a, CirclePoint b) {
  double d = std::fabs(a.x - b.x);
  return d <= 0.5 ? d : 1.0 - d;
}

}  // namespace mvlab
