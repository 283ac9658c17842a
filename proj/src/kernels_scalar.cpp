// Scalar reference kernels. These define the semantics the SIMD variants are
// tested against; elementwise loops use explicit std::fma so that FMA-capable
// backends can match them bit for bit.

#include <cmath>
#include <cstring>

#include "sew/kernels.hpp"
#include "kernels_impl.hpp"

namespace sew::kern {
namespace {

void s_add(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void s_sub(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void s_mul(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void s_mul_acc(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::fma(a[i], b[i], out[i]);
}

void s_affine(const double* x, double scale, double shift, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::fma(scale, x[i], shift);
}

void s_axpy(double s, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::fma(s, x[i], y[i]);
}

double s_sum(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

double s_sumsq(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * x[i];
  return acc;
}

double s_sumsq_centered(const double* x, double mu, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - mu;
    acc += d * d;
  }
  return acc;
}

double s_dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void s_heaviside_ge(const double* x, double threshold, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] >= threshold ? 1.0 : 0.0;
}

void s_arctan_grad_acc(const double* gs, const double* h, double v_th, double alpha,
                       double* gh, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    gh[i] = std::fma(gs[i], detail::arctan_prime(h[i], v_th, alpha), gh[i]);
}

void s_rect_grad_acc(const double* gs, const double* h, double v_th, double width,
                     double* gh, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    gh[i] = std::fma(gs[i], detail::rect_prime(h[i], v_th, width), gh[i]);
}

void s_matmul(const double* a, const double* b, double* c,
              std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate && m * n > 0) std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] = std::fma(av, brow[j], crow[j]);
    }
  }
}

void s_sgd_step(double* p, double* v, const double* g, double lr, double momentum,
                std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = std::fma(momentum, v[i], g[i]);
    p[i] = std::fma(-lr, v[i], p[i]);
  }
}

bool s_all_finite(const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(x[i])) return false;
  return true;
}

}  // namespace

const Ops& scalar_ops() {
  static const Ops ops = {
      "scalar",
      s_add, s_sub, s_mul, s_mul_acc, s_affine, s_axpy,
      s_sum, s_sumsq, s_sumsq_centered, s_dot,
      s_heaviside_ge, s_arctan_grad_acc, s_rect_grad_acc,
      s_matmul, s_sgd_step, s_all_finite,
  };
  return ops;
}

}  // namespace sew::kern
