#include "sew/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <utility>

#include "sew/kernels.hpp"

namespace sew {

namespace {

const kern::Ops& K() { return kern::active(); }

thread_local Tape* t_current = nullptr;
std::atomic<std::uint64_t> g_tape_counter{1};

std::shared_ptr<TensorImpl> make_impl(Shape shape) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->value.resize(shape_numel(impl->shape));
  return impl;
}

void acc(TensorImpl& t, const double* g, std::size_t n) {
  t.accumulate_grad_init();
  K().axpy(1.0, g, t.grad.data(), n);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

void require_finite(const char* op, const std::vector<double>& v) {
  if (!K().all_finite(v.data(), v.size()))
    throw NumericError(std::string(op) + ": non-finite values in output");
}

void transpose(const double* src, double* dst, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

bool recording(std::initializer_list<const Tensor*> ins) {
  if (!Tape::current()) return false;
  for (const Tensor* t : ins)
    if (tracked(*t)) return true;
  return false;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape::Tape() : id_(g_tape_counter.fetch_add(1)) {}

Tape::~Tape() {
  if (t_current == this) t_current = nullptr;
}

Tape* Tape::current() { return t_current; }

Tape::Scope::Scope(Tape& tape) {
  if (t_current) throw GraphError("nested tape scopes are not supported");
  t_current = &tape;
}

Tape::Scope::~Scope() { t_current = nullptr; }

std::int64_t Tape::record(const char* op, std::shared_ptr<TensorImpl> out,
                          std::function<void()> backward) {
  out->producer = static_cast<std::int64_t>(nodes_.size());
  out->tape_id = id_;
  nodes_.push_back(Node{std::move(backward), std::move(out), op});
  return nodes_.back().out->producer;
}

void Tape::backward_seeded(const Tensor& out, const std::vector<double>& seed) {
  if (consumed_)
    throw GraphError("backward on a consumed tape; run a fresh forward pass first");
  const auto& impl = out.impl();
  if (!impl || impl->tape_id != id_ || impl->producer < 0)
    throw GraphError("backward: tensor was not produced on this tape");
  if (seed.size() != impl->value.size())
    throw ShapeError("backward: seed size " + std::to_string(seed.size()) +
                     " does not match output " + shape_str(impl->shape));
  consumed_ = true;
  impl->grad = seed;
  for (std::int64_t i = impl->producer; i >= 0; --i) {
    Node& node = nodes_[static_cast<std::size_t>(i)];
    if (node.out->grad.empty()) continue;
    node.backward();
  }
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  backward_seeded(loss, {1.0});
}

bool tracked(const Tensor& t) {
  if (!t.defined()) return false;
  if (t.requires_grad()) return true;
  Tape* tape = Tape::current();
  return tape && t.impl()->producer >= 0 && t.impl()->tape_id == tape->id();
}

// ---------------------------------------------------------------------------
// Elementwise and scalar ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  auto out = make_impl(a.shape());
  const std::size_t n = a.numel();
  K().add(a.data(), b.data(), out->value.data(), n);
  if (recording({&a, &b})) {
    auto ai = a.impl(), bi = b.impl();
    const bool na = tracked(a), nb = tracked(b);
    auto oi = out;
    Tape::current()->record("add", out, [=] {
      if (na) acc(*ai, oi->grad.data(), n);
      if (nb) acc(*bi, oi->grad.data(), n);
    });
  }
  return Tensor(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  auto out = make_impl(a.shape());
  const std::size_t n = a.numel();
  K().sub(a.data(), b.data(), out->value.data(), n);
  if (recording({&a, &b})) {
    auto ai = a.impl(), bi = b.impl();
    const bool na = tracked(a), nb = tracked(b);
    auto oi = out;
    Tape::current()->record("sub", out, [=] {
      if (na) acc(*ai, oi->grad.data(), n);
      if (nb) {
        bi->accumulate_grad_init();
        K().axpy(-1.0, oi->grad.data(), bi->grad.data(), n);
      }
    });
  }
  return Tensor(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  auto out = make_impl(a.shape());
  const std::size_t n = a.numel();
  K().mul(a.data(), b.data(), out->value.data(), n);
  if (recording({&a, &b})) {
    auto ai = a.impl(), bi = b.impl();
    const bool na = tracked(a), nb = tracked(b);
    auto oi = out;
    Tape::current()->record("mul", out, [=] {
      if (na) {
        ai->accumulate_grad_init();
        K().mul_acc(oi->grad.data(), bi->value.data(), ai->grad.data(), n);
      }
      if (nb) {
        bi->accumulate_grad_init();
        K().mul_acc(oi->grad.data(), ai->value.data(), bi->grad.data(), n);
      }
    });
  }
  return Tensor(out);
}

Tensor affine(const Tensor& x, double scale, double shift) {
  auto out = make_impl(x.shape());
  const std::size_t n = x.numel();
  K().affine(x.data(), scale, shift, out->value.data(), n);
  if (recording({&x})) {
    auto xi = x.impl();
    auto oi = out;
    Tape::current()->record("affine", out, [=] {
      xi->accumulate_grad_init();
      K().axpy(scale, oi->grad.data(), xi->grad.data(), n);
    });
  }
  return Tensor(out);
}

Tensor exp_elem(const Tensor& x) {
  auto out = make_impl(x.shape());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out->value[i] = std::exp(x.data()[i]);
  require_finite("exp", out->value);
  if (recording({&x})) {
    auto xi = x.impl();
    auto oi = out;
    Tape::current()->record("exp", out, [=] {
      xi->accumulate_grad_init();
      K().mul_acc(oi->grad.data(), oi->value.data(), xi->grad.data(), n);
    });
  }
  return Tensor(out);
}

Tensor reciprocal(const Tensor& x) {
  auto out = make_impl(x.shape());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out->value[i] = 1.0 / x.data()[i];
  require_finite("reciprocal", out->value);
  if (recording({&x})) {
    auto xi = x.impl();
    auto oi = out;
    Tape::current()->record("reciprocal", out, [=] {
      xi->accumulate_grad_init();
      for (std::size_t i = 0; i < n; ++i)
        xi->grad[i] -= oi->grad[i] * oi->value[i] * oi->value[i];
    });
  }
  return Tensor(out);
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1)
    throw ShapeError("scale_by: scale must be a 1-element tensor, got " +
                     shape_str(s.shape()));
  auto out = make_impl(x.shape());
  const std::size_t n = x.numel();
  const double sv = s.data()[0];
  K().affine(x.data(), sv, 0.0, out->value.data(), n);
  if (recording({&x, &s})) {
    auto xi = x.impl(), si = s.impl();
    const bool nx = tracked(x), ns = tracked(s);
    auto oi = out;
    Tape::current()->record("scale_by", out, [=] {
      if (nx) {
        xi->accumulate_grad_init();
        K().axpy(si->value[0], oi->grad.data(), xi->grad.data(), n);
      }
      if (ns) {
        si->accumulate_grad_init();
        si->grad[0] += K().dot(oi->grad.data(), xi->value.data(), n);
      }
    });
  }
  return Tensor(out);
}

// ---------------------------------------------------------------------------
// Shape and reduction ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(new_shape));
  auto out = make_impl(std::move(new_shape));
  out->value = x.value();
  const std::size_t n = x.numel();
  if (recording({&x})) {
    auto xi = x.impl();
    auto oi = out;
    Tape::current()->record("reshape", out, [=] { acc(*xi, oi->grad.data(), n); });
  }
  return Tensor(out);
}

Tensor slice_rows(const Tensor& x, std::size_t row0, std::size_t nrows) {
  if (x.rank() < 1 || row0 + nrows > x.dim(0))
    throw ShapeError("slice_rows: rows [" + std::to_string(row0) + "," +
                     std::to_string(row0 + nrows) + ") out of " + shape_str(x.shape()));
  Shape shape = x.shape();
  shape[0] = nrows;
  const std::size_t row_size = x.numel() / x.dim(0);
  auto out = make_impl(std::move(shape));
  std::memcpy(out->value.data(), x.data() + row0 * row_size,
              nrows * row_size * sizeof(double));
  if (recording({&x})) {
    auto xi = x.impl();
    auto oi = out;
    const std::size_t off = row0 * row_size, n = nrows * row_size;
    Tape::current()->record("slice_rows", out, [=] {
      xi->accumulate_grad_init();
      K().axpy(1.0, oi->grad.data(), xi->grad.data() + off, n);
    });
  }
  return Tensor(out);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  Shape shape = parts[0].shape();
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    Shape s = p.shape();
    s[0] = shape[0];
    if (s != shape)
      throw ShapeError("concat_rows: incompatible part shape " + shape_str(p.shape()));
    rows += p.dim(0);
  }
  shape[0] = rows;
  auto out = make_impl(std::move(shape));
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    std::memcpy(out->value.data() + off, p.data(), p.numel() * sizeof(double));
    off += p.numel();
  }
  bool rec = false;
  for (const Tensor& p : parts) rec = rec || tracked(p);
  if (Tape::current() && rec) {
    std::vector<std::shared_ptr<TensorImpl>> impls;
    std::vector<bool> need;
    for (const Tensor& p : parts) {
      impls.push_back(p.impl());
      need.push_back(tracked(p));
    }
    auto oi = out;
    Tape::current()->record("concat_rows", out, [=] {
      std::size_t o = 0;
      for (std::size_t i = 0; i < impls.size(); ++i) {
        const std::size_t n = impls[i]->value.size();
        if (need[i]) acc(*impls[i], oi->grad.data() + o, n);
        o += n;
      }
    });
  }
  return Tensor(out);
}

Tensor sum_all(const Tensor& x) {
  auto out = make_impl({1});
  out->value[0] = K().sum(x.data(), x.numel());
  const std::size_t n = x.numel();
  if (recording({&x})) {
    auto xi = x.impl();
    auto oi = out;
    Tape::current()->record("sum_all", out, [=] {
      xi->accumulate_grad_init();
      const double g = oi->grad[0];
      for (std::size_t i = 0; i < n; ++i) xi->grad[i] += g;
    });
  }
  return Tensor(out);
}

Tensor mean_over_time(const Tensor& x, std::size_t t_steps) {
  if (x.rank() < 1 || t_steps == 0 || x.dim(0) % t_steps != 0)
    throw ShapeError("mean_over_time: " + shape_str(x.shape()) + " with T=" +
                     std::to_string(t_steps));
  const std::size_t batch = x.dim(0) / t_steps;
  Shape shape = x.shape();
  shape[0] = batch;
  const std::size_t row_size = x.numel() / x.dim(0);
  auto out = make_impl(std::move(shape));
  const double inv_t = 1.0 / static_cast<double>(t_steps);
  for (std::size_t b = 0; b < batch; ++b) {
    double* orow = out->value.data() + b * row_size;
    for (std::size_t t = 0; t < t_steps; ++t)
      K().axpy(1.0, x.data() + (t * batch + b) * row_size, orow, row_size);
    K().affine(orow, inv_t, 0.0, orow, row_size);
  }
  if (recording({&x})) {
    auto xi = x.impl();
    auto oi = out;
    Tape::current()->record("mean_over_time", out, [=] {
      xi->accumulate_grad_init();
      for (std::size_t b = 0; b < batch; ++b) {
        const double* grow = oi->grad.data() + b * row_size;
        for (std::size_t t = 0; t < t_steps; ++t)
          K().axpy(inv_t, grow, xi->grad.data() + (t * batch + b) * row_size, row_size);
      }
    });
  }
  return Tensor(out);
}

// ---------------------------------------------------------------------------
// Linear algebra and network ops
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = make_impl({m, n});
  K().matmul(a.data(), b.data(), out->value.data(), m, k, n, false);
  require_finite("matmul", out->value);
  if (recording({&a, &b})) {
    auto ai = a.impl(), bi = b.impl();
    const bool na = tracked(a), nb = tracked(b);
    auto oi = out;
    Tape::current()->record("matmul", out, [=] {
      if (na) {
        // dA += dC * B^T
        std::vector<double> bt(k * n);
        transpose(bi->value.data(), bt.data(), k, n);
        ai->accumulate_grad_init();
        K().matmul(oi->grad.data(), bt.data(), ai->grad.data(), m, n, k, true);
      }
      if (nb) {
        // dB += A^T * dC
        std::vector<double> at(m * k);
        transpose(ai->value.data(), at.data(), m, k);
        bi->accumulate_grad_init();
        K().matmul(at.data(), oi->grad.data(), bi->grad.data(), k, m, n, true);
      }
    });
  }
  return Tensor(out);
}

Tensor add_rowvec(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1))
    throw ShapeError("add_rowvec: " + shape_str(x.shape()) + " + " +
                     shape_str(bias.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  auto out = make_impl(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    K().add(x.data() + r * cols, bias.data(), out->value.data() + r * cols, cols);
  if (recording({&x, &bias})) {
    auto xi = x.impl(), bi = bias.impl();
    const bool nx = tracked(x), nb = tracked(bias);
    auto oi = out;
    Tape::current()->record("add_rowvec", out, [=] {
      if (nx) acc(*xi, oi->grad.data(), rows * cols);
      if (nb) {
        bi->accumulate_grad_init();
        for (std::size_t r = 0; r < rows; ++r)
          K().axpy(1.0, oi->grad.data() + r * cols, bi->grad.data(), cols);
      }
    });
  }
  return Tensor(out);
}

namespace {

struct ConvDims {
  std::size_t batch, cin, h, w, cout, k, stride, pad, ho, wo, ckk, patch;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
  if (x.rank() != 4 || w.rank() != 4)
    throw ShapeError("conv2d: expected NCHW input and OIKK weights, got " +
                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  if (x.dim(1) != w.dim(1))
    throw ShapeError("conv2d: input channels " + std::to_string(x.dim(1)) +
                     " vs weight channels " + std::to_string(w.dim(1)));
  if (w.dim(2) != w.dim(3)) throw ShapeError("conv2d: non-square kernel");
  ConvDims d{};
  d.batch = x.dim(0);
  d.cin = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.cout = w.dim(0);
  d.k = w.dim(2);
  d.stride = stride;
  d.pad = pad;
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (d.h + 2 * pad < d.k || d.w + 2 * pad < d.k)
    throw ShapeError("conv2d: kernel larger than padded input");
  d.ho = (d.h + 2 * pad - d.k) / stride + 1;
  d.wo = (d.w + 2 * pad - d.k) / stride + 1;
  d.ckk = d.cin * d.k * d.k;
  d.patch = d.ho * d.wo;
  return d;
}

// Rows are output pixels, columns the receptive field: col[p][ci*K*K + ky*K + kx]
void im2col(const double* x, const ConvDims& d, double* col) {
  for (std::size_t oy = 0; oy < d.ho; ++oy)
    for (std::size_t ox = 0; ox < d.wo; ++ox) {
      double* row = col + (oy * d.wo + ox) * d.ckk;
      for (std::size_t ci = 0; ci < d.cin; ++ci) {
        const double* plane = x + ci * d.h * d.w;
        for (std::size_t ky = 0; ky < d.k; ++ky) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy * d.stride + ky) - static_cast<std::ptrdiff_t>(d.pad);
          for (std::size_t kx = 0; kx < d.k; ++kx) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * d.stride + kx) - static_cast<std::ptrdiff_t>(d.pad);
            double v = 0.0;
            if (iy >= 0 && iy < static_cast<std::ptrdiff_t>(d.h) && ix >= 0 &&
                ix < static_cast<std::ptrdiff_t>(d.w))
              v = plane[iy * d.w + ix];
            row[(ci * d.k + ky) * d.k + kx] = v;
          }
        }
      }
    }
}

void col2im_acc(const double* col, const ConvDims& d, double* gx) {
  for (std::size_t oy = 0; oy < d.ho; ++oy)
    for (std::size_t ox = 0; ox < d.wo; ++ox) {
      const double* row = col + (oy * d.wo + ox) * d.ckk;
      for (std::size_t ci = 0; ci < d.cin; ++ci) {
        double* plane = gx + ci * d.h * d.w;
        for (std::size_t ky = 0; ky < d.k; ++ky) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy * d.stride + ky) - static_cast<std::ptrdiff_t>(d.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
          for (std::size_t kx = 0; kx < d.k; ++kx) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * d.stride + kx) - static_cast<std::ptrdiff_t>(d.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
            plane[iy * d.w + ix] += row[(ci * d.k + ky) * d.k + kx];
          }
        }
      }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
  const ConvDims d = conv_dims(x, w, stride, pad);
  auto out = make_impl({d.batch, d.cout, d.ho, d.wo});

  // One im2col buffer per image, kept for backward.
  auto cols = std::make_shared<std::vector<double>>(d.batch * d.patch * d.ckk);
  std::vector<double> wt(d.ckk * d.cout);
  transpose(w.data(), wt.data(), d.cout, d.ckk);
  std::vector<double> tmp(d.patch * d.cout);
  for (std::size_t nimg = 0; nimg < d.batch; ++nimg) {
    double* col = cols->data() + nimg * d.patch * d.ckk;
    im2col(x.data() + nimg * d.cin * d.h * d.w, d, col);
    K().matmul(col, wt.data(), tmp.data(), d.patch, d.ckk, d.cout, false);
    transpose(tmp.data(), out->value.data() + nimg * d.cout * d.patch, d.patch, d.cout);
  }
  require_finite("conv2d", out->value);

  if (recording({&x, &w})) {
    auto xi = x.impl(), wi = w.impl();
    const bool nx = tracked(x), nw = tracked(w);
    auto oi = out;
    Tape::current()->record("conv2d", out, [=] {
      std::vector<double> gtmp(d.patch * d.cout);
      std::vector<double> gcol(d.patch * d.ckk);
      if (nw) wi->accumulate_grad_init();
      if (nx) xi->accumulate_grad_init();
      for (std::size_t nimg = 0; nimg < d.batch; ++nimg) {
        const double* gout = oi->grad.data() + nimg * d.cout * d.patch;
        const double* col = cols->data() + nimg * d.patch * d.ckk;
        if (nw)  // dW[cout,ckk] += dOut[cout,p] * col[p,ckk]
          K().matmul(gout, col, wi->grad.data(), d.cout, d.patch, d.ckk, true);
        if (nx) {
          transpose(gout, gtmp.data(), d.cout, d.patch);
          K().matmul(gtmp.data(), wi->value.data(), gcol.data(), d.patch, d.cout, d.ckk,
                     false);
          col2im_acc(gcol.data(), d, xi->grad.data() + nimg * d.cin * d.h * d.w);
        }
      }
    });
  }
  return Tensor(out);
}

namespace {

struct PoolDims {
  std::size_t batch, c, h, w, k, stride, ho, wo;
};

PoolDims pool_dims(const Tensor& x, std::size_t k, std::size_t stride, const char* op) {
  if (x.rank() != 4) throw ShapeError(std::string(op) + ": expected NCHW input");
  if (k == 0 || stride == 0) throw ShapeError(std::string(op) + ": bad window");
  PoolDims d{};
  d.batch = x.dim(0);
  d.c = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.k = k;
  d.stride = stride;
  if (d.h < k || d.w < k) throw ShapeError(std::string(op) + ": window larger than input");
  d.ho = (d.h - k) / stride + 1;
  d.wo = (d.w - k) / stride + 1;
  return d;
}

}  // namespace

Tensor maxpool2d(const Tensor& x, std::size_t k, std::size_t stride) {
  const PoolDims d = pool_dims(x, k, stride, "maxpool2d");
  auto out = make_impl({d.batch, d.c, d.ho, d.wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out->value.size());
  std::size_t oi_idx = 0;
  for (std::size_t n = 0; n < d.batch * d.c; ++n) {
    const double* plane = x.data() + n * d.h * d.w;
    for (std::size_t oy = 0; oy < d.ho; ++oy)
      for (std::size_t ox = 0; ox < d.wo; ++ox, ++oi_idx) {
        double best = plane[oy * d.stride * d.w + ox * d.stride];
        std::size_t best_at = oy * d.stride * d.w + ox * d.stride;
        for (std::size_t ky = 0; ky < d.k; ++ky)
          for (std::size_t kx = 0; kx < d.k; ++kx) {
            const std::size_t at = (oy * d.stride + ky) * d.w + ox * d.stride + kx;
            if (plane[at] > best) {
              best = plane[at];
              best_at = at;
            }
          }
        out->value[oi_idx] = best;
        (*argmax)[oi_idx] = n * d.h * d.w + best_at;
      }
  }
  if (recording({&x})) {
    auto xi = x.impl();
    auto oi = out;
    Tape::current()->record("maxpool2d", out, [=] {
      xi->accumulate_grad_init();
      for (std::size_t i = 0; i < oi->grad.size(); ++i)
        xi->grad[(*argmax)[i]] += oi->grad[i];
    });
  }
  return Tensor(out);
}

Tensor avgpool2d(const Tensor& x, std::size_t k, std::size_t stride) {
  const PoolDims d = pool_dims(x, k, stride, "avgpool2d");
  auto out = make_impl({d.batch, d.c, d.ho, d.wo});
  const double inv = 1.0 / static_cast<double>(d.k * d.k);
  std::size_t oi_idx = 0;
  for (std::size_t n = 0; n < d.batch * d.c; ++n) {
    const double* plane = x.data() + n * d.h * d.w;
    for (std::size_t oy = 0; oy < d.ho; ++oy)
      for (std::size_t ox = 0; ox < d.wo; ++ox, ++oi_idx) {
        double s = 0.0;
        for (std::size_t ky = 0; ky < d.k; ++ky)
          for (std::size_t kx = 0; kx < d.k; ++kx)
            s += plane[(oy * d.stride + ky) * d.w + ox * d.stride + kx];
        out->value[oi_idx] = s * inv;
      }
  }
  if (recording({&x})) {
    auto xi = x.impl();
    auto oi = out;
    Tape::current()->record("avgpool2d", out, [=] {
      xi->accumulate_grad_init();
      std::size_t idx = 0;
      for (std::size_t n = 0; n < d.batch * d.c; ++n) {
        double* gplane = xi->grad.data() + n * d.h * d.w;
        for (std::size_t oy = 0; oy < d.ho; ++oy)
          for (std::size_t ox = 0; ox < d.wo; ++ox, ++idx) {
            const double g = oi->grad[idx] * inv;
            for (std::size_t ky = 0; ky < d.k; ++ky)
              for (std::size_t kx = 0; kx < d.k; ++kx)
                gplane[(oy * d.stride + ky) * d.w + ox * d.stride + kx] += g;
          }
      }
    });
  }
  return Tensor(out);
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

namespace {

struct BnLayout {
  std::size_t channels;     // C
  std::size_t per_channel;  // elements per channel in the whole batch
};

BnLayout bn_layout(const Tensor& x) {
  if (x.rank() == 2) return {x.dim(1), x.dim(0)};
  if (x.rank() == 4) return {x.dim(1), x.dim(0) * x.dim(2) * x.dim(3)};
  throw ShapeError("batchnorm: expected rank-2 or rank-4 input, got " +
                   shape_str(x.shape()));
}

// Walks the elements of one channel: rank-4 inputs in contiguous H*W runs per
// image, rank-2 inputs strided by the feature count.
template <typename Fn>
void for_channel_runs(const Tensor& x, std::size_t c, Fn&& fn) {
  if (x.rank() == 4) {
    const std::size_t batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
    for (std::size_t n = 0; n < batch; ++n) fn((n * ch + c) * plane, plane, std::size_t{1});
  } else {
    const std::size_t f = x.dim(1);
    fn(c, x.dim(0), f);
  }
}

}  // namespace

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 BatchNormBuffers& buffers, bool training, double momentum, double eps) {
  const BnLayout lay = bn_layout(x);
  if (gamma.numel() != lay.channels || beta.numel() != lay.channels)
    throw ShapeError("batchnorm: gamma/beta size must equal channel count " +
                     std::to_string(lay.channels));
  if (buffers.running_mean.size() != lay.channels) {
    buffers.running_mean.assign(lay.channels, 0.0);
    buffers.running_var.assign(lay.channels, 1.0);
  }
  if (training && lay.per_channel < 2)
    throw ShapeError("batchnorm: need at least 2 elements per channel in training");

  auto out = make_impl(x.shape());
  auto mean = std::make_shared<std::vector<double>>(lay.channels);
  auto invstd = std::make_shared<std::vector<double>>(lay.channels);

  const double m = static_cast<double>(lay.per_channel);
  for (std::size_t c = 0; c < lay.channels; ++c) {
    double mu, var;
    if (training) {
      double s = 0.0;
      for_channel_runs(x, c, [&](std::size_t off, std::size_t n, std::size_t stride) {
        if (stride == 1) {
          s += K().sum(x.data() + off, n);
        } else {
          for (std::size_t i = 0; i < n; ++i) s += x.data()[off + i * stride];
        }
      });
      mu = s / m;
      double sq = 0.0;
      for_channel_runs(x, c, [&](std::size_t off, std::size_t n, std::size_t stride) {
        if (stride == 1) {
          sq += K().sumsq_centered(x.data() + off, mu, n);
        } else {
          for (std::size_t i = 0; i < n; ++i) {
            const double dlt = x.data()[off + i * stride] - mu;
            sq += dlt * dlt;
          }
        }
      });
      var = sq / m;
      buffers.running_mean[c] = momentum * buffers.running_mean[c] + (1.0 - momentum) * mu;
      buffers.running_var[c] = momentum * buffers.running_var[c] + (1.0 - momentum) * var;
    } else {
      mu = buffers.running_mean[c];
      var = buffers.running_var[c];
    }
    (*mean)[c] = mu;
    (*invstd)[c] = 1.0 / std::sqrt(var + eps);

    const double a = gamma.data()[c] * (*invstd)[c];
    const double b = beta.data()[c] - a * mu;
    for_channel_runs(x, c, [&](std::size_t off, std::size_t n, std::size_t stride) {
      if (stride == 1) {
        K().affine(x.data() + off, a, b, out->value.data() + off, n);
      } else {
        for (std::size_t i = 0; i < n; ++i)
          out->value[off + i * stride] = std::fma(a, x.data()[off + i * stride], b);
      }
    });
  }
  require_finite("batchnorm", out->value);

  if (recording({&x, &gamma, &beta})) {
    auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
    const bool nx = tracked(x), ng = tracked(gamma), nb = tracked(beta);
    auto oi = out;
    const bool train_stats = training;
    Tape::current()->record("batchnorm", out, [=] {
      if (nx) xi->accumulate_grad_init();
      if (ng) gi->accumulate_grad_init();
      if (nb) bi->accumulate_grad_init();
      Tensor xv(xi);
      const BnLayout l = bn_layout(xv);
      const double mm = static_cast<double>(l.per_channel);
      for (std::size_t c = 0; c < l.channels; ++c) {
        const double mu = (*mean)[c], is = (*invstd)[c], g = gi->value[c];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for_channel_runs(xv, c, [&](std::size_t off, std::size_t n, std::size_t stride) {
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t at = off + i * stride;
            const double dy = oi->grad[at];
            sum_dy += dy;
            sum_dy_xhat += dy * (xi->value[at] - mu) * is;
          }
        });
        if (ng) gi->grad[c] += sum_dy_xhat;
        if (nb) bi->grad[c] += sum_dy;
        if (!nx) continue;
        if (train_stats) {
          const double c1 = sum_dy / mm, c2 = sum_dy_xhat / mm;
          for_channel_runs(xv, c, [&](std::size_t off, std::size_t n, std::size_t stride) {
            for (std::size_t i = 0; i < n; ++i) {
              const std::size_t at = off + i * stride;
              const double xhat = (xi->value[at] - mu) * is;
              xi->grad[at] += g * is * (oi->grad[at] - c1 - xhat * c2);
            }
          });
        } else {
          for_channel_runs(xv, c, [&](std::size_t off, std::size_t n, std::size_t stride) {
            for (std::size_t i = 0; i < n; ++i) {
              const std::size_t at = off + i * stride;
              xi->grad[at] += g * is * oi->grad[at];
            }
          });
        }
      }
    });
  }
  return Tensor(out);
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " with " +
                     std::to_string(labels.size()) + " labels");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  for (int lab : labels)
    if (lab < 0 || static_cast<std::size_t>(lab) >= classes)
      throw DomainError("cross_entropy: label " + std::to_string(lab) + " out of range");

  auto probs = std::make_shared<std::vector<double>>(batch * classes);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* z = logits.data() + b * classes;
    double zmax = z[0];
    for (std::size_t j = 1; j < classes; ++j) zmax = std::max(zmax, z[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < classes; ++j) denom += std::exp(z[j] - zmax);
    const double lse = zmax + std::log(denom);
    total += lse - z[labels[b]];
    for (std::size_t j = 0; j < classes; ++j)
      (*probs)[b * classes + j] = std::exp(z[j] - lse);
  }
  auto out = make_impl({1});
  out->value[0] = total / static_cast<double>(batch);
  require_finite("cross_entropy", out->value);

  if (recording({&logits})) {
    auto li = logits.impl();
    auto oi = out;
    auto labs = std::make_shared<std::vector<int>>(labels);
    Tape::current()->record("cross_entropy", out, [=] {
      li->accumulate_grad_init();
      const double g = oi->grad[0] / static_cast<double>(batch);
      for (std::size_t b = 0; b < batch; ++b) {
        double* gz = li->grad.data() + b * classes;
        const double* p = probs->data() + b * classes;
        for (std::size_t j = 0; j < classes; ++j) gz[j] += g * p[j];
        gz[(*labs)[b]] -= g;
      }
    });
  }
  return Tensor(out);
}

// ---------------------------------------------------------------------------
// Spiking ops
// ---------------------------------------------------------------------------

Tensor spike(const Tensor& h, double v_threshold, const SurrogateSpec& surrogate) {
  auto out = make_impl(h.shape());
  const std::size_t n = h.numel();
  K().heaviside_ge(h.data(), v_threshold, out->value.data(), n);
  if (recording({&h})) {
    auto hi = h.impl();
    auto oi = out;
    const SurrogateSpec sur = surrogate;
    Tape::current()->record("spike", out, [=] {
      hi->accumulate_grad_init();
      switch (sur.kind) {
        case SurrogateKind::ArcTan:
          K().arctan_grad_acc(oi->grad.data(), hi->value.data(), v_threshold, sur.alpha,
                              hi->grad.data(), n);
          break;
        case SurrogateKind::Rectangular:
          K().rect_grad_acc(oi->grad.data(), hi->value.data(), v_threshold, sur.width,
                            hi->grad.data(), n);
          break;
        case SurrogateKind::Constant1:
          K().axpy(1.0, oi->grad.data(), hi->grad.data(), n);
          break;
      }
    });
  }
  return Tensor(out);
}

Tensor detach(const Tensor& x) {
  auto out = make_impl(x.shape());
  out->value = x.value();
  return Tensor(out);
}

}  // namespace sew
