// AVX2 kernel variants (4 doubles per vector, FMA). Remainder lanes fall back
// to the shared per-element helpers so results match the scalar reference
// bit for bit on elementwise paths. This translation unit is the only one
// compiled with -mavx2 -mfma; callers reach it through kern::active().

#include <cmath>
#include <cstring>
#include <immintrin.h>

#include "sew/kernels.hpp"
#include "kernels_impl.hpp"

namespace sew::kern {
namespace {

inline double hadd(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

void v_add(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void v_sub(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void v_mul(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void v_mul_acc(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i),
                                        _mm256_loadu_pd(out + i));
    _mm256_storeu_pd(out + i, acc);
  }
  for (; i < n; ++i) out[i] = std::fma(a[i], b[i], out[i]);
}

void v_affine(const double* x, double scale, double shift, double* out, std::size_t n) {
  const __m256d vs = _mm256_set1_pd(scale);
  const __m256d vc = _mm256_set1_pd(shift);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_fmadd_pd(vs, _mm256_loadu_pd(x + i), vc));
  for (; i < n; ++i) out[i] = std::fma(scale, x[i], shift);
}

void v_axpy(double s, const double* x, double* y, std::size_t n) {
  const __m256d vs = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(vs, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] = std::fma(s, x[i], y[i]);
}

double v_sum(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double r = hadd(acc);
  for (; i < n; ++i) r += x[i];
  return r;
}

double v_sumsq(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    acc = _mm256_fmadd_pd(v, v, acc);
  }
  double r = hadd(acc);
  for (; i < n; ++i) r += x[i] * x[i];
  return r;
}

double v_sumsq_centered(const double* x, double mu, std::size_t n) {
  const __m256d vm = _mm256_set1_pd(mu);
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), vm);
    acc = _mm256_fmadd_pd(d, d, acc);
  }
  double r = hadd(acc);
  for (; i < n; ++i) {
    const double d = x[i] - mu;
    r += d * d;
  }
  return r;
}

double v_dot(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  double r = hadd(acc);
  for (; i < n; ++i) r += a[i] * b[i];
  return r;
}

void v_heaviside_ge(const double* x, double threshold, double* out, std::size_t n) {
  const __m256d vt = _mm256_set1_pd(threshold);
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d m = _mm256_cmp_pd(_mm256_loadu_pd(x + i), vt, _CMP_GE_OQ);
    _mm256_storeu_pd(out + i, _mm256_and_pd(m, one));
  }
  for (; i < n; ++i) out[i] = x[i] >= threshold ? 1.0 : 0.0;
}

void v_arctan_grad_acc(const double* gs, const double* h, double v_th, double alpha,
                       double* gh, std::size_t n) {
  const __m256d vth = _mm256_set1_pd(v_th);
  const __m256d vc = _mm256_set1_pd(detail::kHalfPi * alpha);
  const __m256d va = _mm256_set1_pd(alpha);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d two = _mm256_set1_pd(2.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d u = _mm256_mul_pd(vc, _mm256_sub_pd(_mm256_loadu_pd(h + i), vth));
    const __m256d den = _mm256_mul_pd(two, _mm256_fmadd_pd(u, u, one));
    const __m256d sp = _mm256_div_pd(va, den);
    _mm256_storeu_pd(gh + i, _mm256_fmadd_pd(_mm256_loadu_pd(gs + i), sp,
                                             _mm256_loadu_pd(gh + i)));
  }
  for (; i < n; ++i)
    gh[i] = std::fma(gs[i], detail::arctan_prime(h[i], v_th, alpha), gh[i]);
}

void v_rect_grad_acc(const double* gs, const double* h, double v_th, double width,
                     double* gh, std::size_t n) {
  const __m256d vth = _mm256_set1_pd(v_th);
  const __m256d half_w = _mm256_set1_pd(0.5 * width);
  const __m256d inv_w = _mm256_set1_pd(1.0 / width);
  const __m256d abs_mask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7fffffffffffffffLL));
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d x = _mm256_sub_pd(_mm256_loadu_pd(h + i), vth);
    const __m256d inside = _mm256_cmp_pd(_mm256_and_pd(x, abs_mask), half_w, _CMP_LT_OQ);
    const __m256d sp = _mm256_and_pd(inside, inv_w);
    _mm256_storeu_pd(gh + i, _mm256_fmadd_pd(_mm256_loadu_pd(gs + i), sp,
                                             _mm256_loadu_pd(gh + i)));
  }
  for (; i < n; ++i)
    gh[i] = std::fma(gs[i], detail::rect_prime(h[i], v_th, width), gh[i]);
}

void v_matmul(const double* a, const double* b, double* c,
              std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate && m * n > 0) std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      const __m256d va = _mm256_set1_pd(av);
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4) {
        const __m256d acc =
            _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j), _mm256_loadu_pd(crow + j));
        _mm256_storeu_pd(crow + j, acc);
      }
      for (; j < n; ++j) crow[j] = std::fma(av, brow[j], crow[j]);
    }
  }
}

void v_sgd_step(double* p, double* v, const double* g, double lr, double momentum,
                std::size_t n) {
  const __m256d vm = _mm256_set1_pd(momentum);
  const __m256d vlr = _mm256_set1_pd(-lr);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d nv = _mm256_fmadd_pd(vm, _mm256_loadu_pd(v + i), _mm256_loadu_pd(g + i));
    _mm256_storeu_pd(v + i, nv);
    _mm256_storeu_pd(p + i, _mm256_fmadd_pd(vlr, nv, _mm256_loadu_pd(p + i)));
  }
  for (; i < n; ++i) {
    v[i] = std::fma(momentum, v[i], g[i]);
    p[i] = std::fma(-lr, v[i], p[i]);
  }
}

bool v_all_finite(const double* x, std::size_t n) {
  const __m256d abs_mask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7fffffffffffffffLL));
  const __m256d inf = _mm256_set1_pd(__builtin_inf());
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d a = _mm256_and_pd(_mm256_loadu_pd(x + i), abs_mask);
    const __m256d ok = _mm256_cmp_pd(a, inf, _CMP_LT_OQ);  // NaN compares false
    if (_mm256_movemask_pd(ok) != 0xF) return false;
  }
  for (; i < n; ++i)
    if (!std::isfinite(x[i])) return false;
  return true;
}

}  // namespace

const Ops* avx2_ops_build() {
  static const Ops ops = {
      "avx2",
      v_add, v_sub, v_mul, v_mul_acc, v_affine, v_axpy,
      v_sum, v_sumsq, v_sumsq_centered, v_dot,
      v_heaviside_ge, v_arctan_grad_acc, v_rect_grad_acc,
      v_matmul, v_sgd_step, v_all_finite,
  };
  return &ops;
}

}  // namespace sew::kern
