#pragma once

// Reverse-mode automatic differentiation over an explicit tape. Each forward
// pass records onto one Tape (activated via Tape::Scope); the tape is a valid
// topological order by construction and is consumed by a single backward().
// With no active tape, ops run value-only. detach() severs gradient flow.

#include <cstdint>
#include <functional>
#include <vector>

#include "sew/surrogate.hpp"
#include "sew/tensor.hpp"

namespace sew {

class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  // Backward from a scalar loss (seed 1), or from an arbitrary tensor with an
  // explicit seed of matching size. A tape can be consumed only once.
  void backward(const Tensor& loss);
  void backward_seeded(const Tensor& out, const std::vector<double>& seed);

  std::size_t size() const { return nodes_.size(); }
  std::uint64_t id() const { return id_; }

  static Tape* current();

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
  };

  // -- recording interface (used by the op implementations) --
  struct Node {
    std::function<void()> backward;
    std::shared_ptr<TensorImpl> out;
    const char* op;
  };
  std::int64_t record(const char* op, std::shared_ptr<TensorImpl> out,
                      std::function<void()> backward);

 private:
  std::vector<Node> nodes_;
  std::uint64_t id_;
  bool consumed_ = false;
};

// True if t should propagate gradient on the currently active tape.
bool tracked(const Tensor& t);

// ---- elementwise / scalar ops ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor affine(const Tensor& x, double scale, double shift);
Tensor exp_elem(const Tensor& x);
Tensor reciprocal(const Tensor& x);
// x * s[0], s is a 1-element tensor (gradient flows into both)
Tensor scale_by(const Tensor& x, const Tensor& s);

// ---- shape / reduction ops ----
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor slice_rows(const Tensor& x, std::size_t row0, std::size_t nrows);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor sum_all(const Tensor& x);
// x has T*B rows; returns B rows averaged over the leading time blocks
Tensor mean_over_time(const Tensor& x, std::size_t t_steps);

// ---- linear algebra / network ops ----
Tensor matmul(const Tensor& a, const Tensor& b);
// x: [N,F], bias: [F]
Tensor add_rowvec(const Tensor& x, const Tensor& bias);
// x: [N,C,H,W], w: [Cout,Cin,K,K]
Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad);
Tensor maxpool2d(const Tensor& x, std::size_t k, std::size_t stride);
Tensor avgpool2d(const Tensor& x, std::size_t k, std::size_t stride);

struct BatchNormBuffers {
  std::vector<double> running_mean;
  std::vector<double> running_var;
};
// Per-channel statistics over every non-channel axis of the merged [T*B,...]
// batch; training mode uses batch statistics and updates the running buffers
// in place, eval mode normalizes with the stored running statistics.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 BatchNormBuffers& buffers, bool training, double momentum, double eps);

// logits: [B,classes]; mean cross-entropy over the batch
Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& labels);

// ---- spiking ops ----
// Heaviside step on h - v_threshold with theta(0) = 1; backward applies the
// registered surrogate derivative at h - v_threshold.
Tensor spike(const Tensor& h, double v_threshold, const SurrogateSpec& surrogate);
Tensor detach(const Tensor& x);

}  // namespace sew
