#pragma once

// Double-precision inner-loop kernels. Scalar reference implementations plus
// AVX2 variants selected at runtime (override with SEW_KERNELS=scalar|avx2 or
// set_active()). Elementwise kernels and matmul follow the same per-element
// fma/rounding sequence in every implementation and are bit-identical across
// backends; reductions (sum, dot, ...) reassociate and agree only within
// tolerance.

#include <cstddef>

namespace sew::kern {

struct Ops {
  const char* name;

  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  void (*sub)(const double* a, const double* b, double* out, std::size_t n);
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  // out += a * b
  void (*mul_acc)(const double* a, const double* b, double* out, std::size_t n);
  // out = scale * x + shift
  void (*affine)(const double* x, double scale, double shift, double* out, std::size_t n);
  // y += s * x
  void (*axpy)(double s, const double* x, double* y, std::size_t n);

  double (*sum)(const double* x, std::size_t n);
  double (*sumsq)(const double* x, std::size_t n);
  double (*sumsq_centered)(const double* x, double mu, std::size_t n);
  double (*dot)(const double* a, const double* b, std::size_t n);

  // out[i] = x[i] >= threshold ? 1 : 0
  void (*heaviside_ge)(const double* x, double threshold, double* out, std::size_t n);
  // gh[i] += gs[i] * alpha / (2 * (1 + ((pi/2) * alpha * (h[i] - v_th))^2))
  void (*arctan_grad_acc)(const double* gs, const double* h, double v_th, double alpha,
                          double* gh, std::size_t n);
  // gh[i] += gs[i] * (|h[i] - v_th| < width/2 ? 1/width : 0)
  void (*rect_grad_acc)(const double* gs, const double* h, double v_th, double width,
                        double* gh, std::size_t n);

  // c[m,n] (+)= a[m,k] * b[k,n], row-major
  void (*matmul)(const double* a, const double* b, double* c,
                 std::size_t m, std::size_t k, std::size_t n, bool accumulate);

  // v = momentum * v + g; p = p - lr * v
  void (*sgd_step)(double* p, double* v, const double* g, double lr, double momentum,
                   std::size_t n);

  bool (*all_finite)(const double* x, std::size_t n);
};

const Ops& scalar_ops();
const Ops* avx2_ops();  // nullptr when the build or CPU lacks AVX2+FMA

const Ops& active();
void set_active(const Ops& ops);
void reset_active();

}  // namespace sew::kern
