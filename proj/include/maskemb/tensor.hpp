// maskemb/tensor.hpp

// Copyright 2026  The maskemb Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef MASKEMB_TENSOR_HPP_
#define MASKEMB_TENSOR_HPP_

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "maskemb/error.hpp"

namespace maskemb {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape &shape);
std::string shape_string(const Shape &shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  long node = -1;            // index of the producing tape node, -1 for leaves
  const void *tape = nullptr;

  std::vector<double> &ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major array of doubles. Copies share storage; treat values as
/// immutable once the tensor participates in a computation. Parameters are
/// the exception and are updated in place by the optimizer.
class Tensor {
 public:
  Tensor() = default;
  /// Zero-filled tensor.
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad);
  static Tensor scalar(double value);
  static Tensor full(Shape shape, double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape &shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> values() const { return impl_->data; }
  std::span<double> mutable_values() { return impl_->data; }
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer; zeros of the value shape if nothing was accumulated.
  std::vector<double> grad() const;
  std::span<double> mutable_grad() { return impl_->ensure_grad(); }
  void zero_grad();

  /// Fresh leaf with a copy of the values and no gradient history.
  Tensor detach() const;
  bool same_storage(const Tensor &other) const { return impl_ == other.impl_; }

  const std::shared_ptr<detail::TensorImpl> &impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Records differentiable operations for one forward/backward pass.
/// A tape is single-threaded and consumed by backward().
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  void record(std::vector<Tensor> inputs, const Tensor &output,
              BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and visits every recorded node once in
  /// reverse order. Throws TapeError for non-scalar losses, losses not
  /// recorded here, or a second call.
  void backward(const Tensor &loss);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  void reset();

 private:
  struct Node {
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// Tape that ops on this thread record into, or nullptr.
Tape *active_tape();

/// Installs a tape as the active one for the enclosing scope.
class TapeScope {
 public:
  explicit TapeScope(Tape &tape);
  ~TapeScope();
  TapeScope(const TapeScope &) = delete;
  TapeScope &operator=(const TapeScope &) = delete;

 private:
  Tape *previous_;
};

/// Disables recording for the enclosing scope.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope &) = delete;
  NoGradScope &operator=(const NoGradScope &) = delete;

 private:
  Tape *previous_;
};

/// True when an op with these inputs must be recorded.
bool should_record(std::initializer_list<const Tensor *> inputs);

using NamedTensor = std::pair<std::string, Tensor>;

enum class Stencil {
  kCentral2,  // (f(x+h) - f(x-h)) / 2h
  kCentral4,  // (8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h
};

/// Compares tape gradients against central differences for every element of
/// every parameter. `loss_fn` must rebuild the graph from the parameters on
/// each call and return a scalar. Returns
///   max |analytic - numeric| / max(floor, |numeric|)
/// over all elements. Throws NumericError naming the parameter when the loss
/// turns non-finite under perturbation.
double finite_difference_check(const std::function<Tensor()> &loss_fn,
                               std::vector<NamedTensor> params,
                               double step = 1e-5, double floor = 1e-12,
                               Stencil stencil = Stencil::kCentral2);

}  // namespace maskemb

#endif  // MASKEMB_TENSOR_HPP_
