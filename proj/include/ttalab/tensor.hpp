#pragma once

#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "ttalab/common.hpp"

namespace ttalab {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    check(d >= 0, "negative dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + "]";
}

// Dense tensor with value semantics over shared storage: copies alias the
// same buffer. Gradient storage is allocated only when requires_grad is set.
// The scalar type is a template parameter; experiments run in float and
// gradient checks instantiate double.
template <typename S>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(Shape shape, S fill = S(0), bool requires_grad = false)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<S>>(shape_numel(shape_), fill)) {
    if (requires_grad) enable_grad();
  }

  static TensorT scalar(S v) {
    TensorT t(Shape{});
    (*t.data_)[0] = v;
    return t;
  }

  static TensorT from_vec(Shape shape, std::vector<S> values,
                          bool requires_grad = false) {
    check(shape_numel(shape) == values.size(), "from_vec: size mismatch");
    TensorT t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<S>>(std::move(values));
    if (requires_grad) t.enable_grad();
    return t;
  }

  const Shape& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::size_t numel() const { return data_ ? data_->size() : 0; }
  bool defined() const { return static_cast<bool>(data_); }

  S* data() { return data_->data(); }
  const S* data() const { return data_->data(); }
  std::vector<S>& vec() { return *data_; }
  const std::vector<S>& vec() const { return *data_; }

  S item() const {
    check(numel() == 1, "item(): tensor is not scalar, shape " + shape_str(shape_));
    return (*data_)[0];
  }

  bool requires_grad() const { return static_cast<bool>(grad_); }

  void enable_grad() {
    if (!grad_) grad_ = std::make_shared<std::vector<S>>(numel(), S(0));
  }

  S* grad() {
    if (!grad_) throw ContractError("gradient requested for a tensor without grad storage");
    return grad_->data();
  }
  const S* grad() const {
    if (!grad_) throw ContractError("gradient requested for a tensor without grad storage");
    return grad_->data();
  }
  std::vector<S>& grad_vec() {
    if (!grad_) throw ContractError("gradient requested for a tensor without grad storage");
    return *grad_;
  }
  const std::vector<S>& grad_vec() const {
    if (!grad_) throw ContractError("gradient requested for a tensor without grad storage");
    return *grad_;
  }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), S(0));
  }

  // Deep copy of values (gradient storage is fresh and zeroed if enabled).
  TensorT clone() const {
    TensorT t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<S>>(*data_);
    if (grad_) t.enable_grad();
    return t;
  }

  // Same storage identity test; the tape keys gradient flow on this.
  bool same_storage(const TensorT& o) const { return data_ == o.data_; }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<S>> data_;
  std::shared_ptr<std::vector<S>> grad_;
};

// Reverse-mode tape, rebuilt per forward pass. Ops append a closure that
// scatters the output gradient into input gradients; backward() replays the
// closures in reverse push order, which is a valid topological order because
// operands are always recorded before their consumers. Single-threaded per
// tape by contract.
template <typename S>
class Tape {
 public:
  void push(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

  std::size_t size() const { return ops_.size(); }

  // Seeds d(loss)/d(loss) = 1 and propagates. The root must be scalar.
  void backward(TensorT<S>& loss) {
    check(loss.numel() == 1, "backward: root must be scalar, shape " +
                                 shape_str(loss.shape()));
    check(loss.requires_grad(),
          "backward: root does not depend on any tracked tensor");
    loss.grad()[0] += S(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  void clear() { ops_.clear(); }

 private:
  std::vector<std::function<void()>> ops_;
};

}  // namespace ttalab
