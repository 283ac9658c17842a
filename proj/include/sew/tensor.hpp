#pragma once

// Dense double-precision tensors with shape metadata. A Tensor is a cheap
// handle onto a shared implementation record; the autodiff tape stores these
// records to keep the forward graph alive across backward.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "sew/errors.hpp"

namespace sew {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until backward touches this tensor
  bool requires_grad = false;
  std::int64_t producer = -1;  // node index on the producing tape
  std::uint64_t tape_id = 0;   // id of the producing tape, 0 = none

  void accumulate_grad_init() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, double fill, bool requires_grad = false);
  explicit Tensor(Shape shape) : Tensor(std::move(shape), 0.0, false) {}
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor of(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t numel() const { return impl_->value.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rank() const { return impl_->shape.size(); }

  std::vector<double>& value() { return impl_->value; }
  const std::vector<double>& value() const { return impl_->value; }
  double* data() { return impl_->value.data(); }
  const double* data() const { return impl_->value.data(); }

  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool b) { impl_->requires_grad = b; }

  // Accumulated gradient; empty vector when backward never reached this
  // tensor (treat as zero).
  const std::vector<double>& grad() const { return impl_->grad; }
  double grad_at(std::size_t i) const { return impl_->grad.empty() ? 0.0 : impl_->grad[i]; }
  void zero_grad() { impl_->grad.clear(); }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

}  // namespace sew
