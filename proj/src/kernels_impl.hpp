#pragma once

// Per-element semantics shared by the scalar kernels and the remainder lanes
// of the SIMD kernels. Keeping these in one place is what makes the backends
// bit-identical on elementwise paths.

#include <cmath>
#include <cstddef>

namespace sew::kern::detail {

inline constexpr double kHalfPi = 1.5707963267948966;

inline double arctan_prime(double h, double v_th, double alpha) {
  const double u = (kHalfPi * alpha) * (h - v_th);
  return alpha / (2.0 * std::fma(u, u, 1.0));
}

inline double rect_prime(double h, double v_th, double width) {
  const double x = h - v_th;
  return std::fabs(x) < 0.5 * width ? 1.0 / width : 0.0;
}

}  // namespace sew::kern::detail
