#pragma once

// Surrogate gradients for the Heaviside spike nonlinearity. The forward pass
// always emits hard 0/1 spikes; prime() defines what backward multiplies by.
// value() is the smooth primitive whose derivative is prime(), used by the
// finite-difference test oracles.

#include <cmath>
#include <string>

#include "sew/errors.hpp"

namespace sew {

enum class SurrogateKind { ArcTan, Rectangular, Constant1 };

struct SurrogateSpec {
  SurrogateKind kind = SurrogateKind::ArcTan;
  double alpha = 2.0;  // ArcTan slope
  double width = 1.0;  // Rectangular window ("a")

  double prime(double x) const {
    switch (kind) {
      case SurrogateKind::ArcTan: {
        const double u = 1.5707963267948966 * alpha * x;
        return alpha / (2.0 * std::fma(u, u, 1.0));
      }
      case SurrogateKind::Rectangular:
        return std::fabs(x) < 0.5 * width ? 1.0 / width : 0.0;
      case SurrogateKind::Constant1:
        return 1.0;
    }
    return 0.0;
  }

  double value(double x) const {
    switch (kind) {
      case SurrogateKind::ArcTan:
        return std::atan(1.5707963267948966 * alpha * x) / 3.141592653589793 + 0.5;
      case SurrogateKind::Rectangular: {
        const double y = x / width + 0.5;
        return y < 0.0 ? 0.0 : (y > 1.0 ? 1.0 : y);
      }
      case SurrogateKind::Constant1:
        return x;
    }
    return 0.0;
  }

  void validate() const {
    if (kind == SurrogateKind::ArcTan && alpha <= 0.0)
      throw ConfigError("surrogate: alpha must be positive");
    if (kind == SurrogateKind::Rectangular && width <= 0.0)
      throw ConfigError("surrogate: width must be positive");
  }
};

SurrogateKind parse_surrogate_kind(const std::string& name);
const char* surrogate_kind_name(SurrogateKind k);

}  // namespace sew
