// src/tensor.cpp

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

#include "maskemb/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace maskemb {

std::size_t shape_numel(const Shape &shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) : impl_(std::make_shared<detail::TensorImpl>()) {
  impl_->data.assign(shape_numel(shape), 0.0);
  impl_->shape = std::move(shape);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t(std::move(shape));
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  if (shape_numel(shape) != values.size())
    throw ShapeError("Tensor", "product(shape) " + shape_string(shape) +
                                   " != " + std::to_string(values.size()) +
                                   " values");
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value) {
  return Tensor(Shape{}, std::vector<double>{value});
}

Tensor Tensor::full(Shape shape, double value) {
  std::vector<double> v(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(v));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank())
    throw ShapeError("Tensor::dim", "axis " + std::to_string(axis) +
                                        " out of range for " +
                                        shape_string(shape()));
  return impl_->shape[axis];
}

double Tensor::item() const {
  if (numel() != 1)
    throw ShapeError("Tensor::item", "tensor " + shape_string(shape()) +
                                         " is not a scalar");
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank())
    throw ShapeError("Tensor::at", "rank", rank(), index.size());
  std::size_t flat = 0, axis = 0;
  for (std::size_t i : index) {
    if (i >= impl_->shape[axis])
      throw ShapeError("Tensor::at", "index out of range on axis " +
                                         std::to_string(axis));
    flat = flat * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty())
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data); }

// ---------------------------------------------------------------------------

namespace {
thread_local Tape *g_active_tape = nullptr;
}

Tape *active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape &tape) : previous_(g_active_tape) {
  g_active_tape = &tape;
}
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) {
  g_active_tape = nullptr;
}
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

bool should_record(std::initializer_list<const Tensor *> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor *t : inputs)
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  return false;
}

void Tape::record(std::vector<Tensor> inputs, const Tensor &output,
                  BackwardFn backward) {
  if (consumed_)
    throw TapeError("Tape::record: tape already consumed; call reset()");
  const long index = static_cast<long>(nodes_.size());
  Node node;
  node.inputs.reserve(inputs.size());
  for (const Tensor &t : inputs) {
    if (!t.defined()) continue;
    if (t.impl()->tape == this && t.impl()->node >= index)
      throw TapeError("Tape::record: input recorded after its consumer");
    node.inputs.push_back(t.impl());
  }
  output.impl()->requires_grad = true;
  output.impl()->node = index;
  output.impl()->tape = this;
  node.output = output.impl();
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
}

void Tape::backward(const Tensor &loss) {
  if (consumed_)
    throw TapeError("Tape::backward: already run; re-record the graph first");
  if (!loss.defined() || loss.numel() != 1)
    throw TapeError("Tape::backward: loss must be a scalar");
  if (loss.impl()->tape != this)
    throw TapeError("Tape::backward: loss was not produced on this tape");
  consumed_ = true;
  loss.impl()->ensure_grad()[0] += 1.0;
  const std::size_t last = static_cast<std::size_t>(loss.impl()->node);
  for (std::size_t i = last + 1; i-- > 0;) {
    Node &node = nodes_[i];
    if (!node.output->grad.empty()) node.backward();
  }
  // Closures hold activations; drop them now that gradients are in place.
  nodes_.clear();
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

// ---------------------------------------------------------------------------

double finite_difference_check(const std::function<Tensor()> &loss_fn,
                               std::vector<NamedTensor> params, double step,
                               double floor, Stencil stencil) {
  for (auto &p : params) p.second.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    if (!std::isfinite(loss.item()))
      throw NumericError("finite_difference_check: loss is not finite");
    tape.backward(loss);
  }
  NoGradScope no_grad;
  double worst = 0.0;
  for (auto &[name, param] : params) {
    const std::vector<double> analytic = param.grad();
    std::span<double> values = param.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      auto at = [&](double offset) {
        values[i] = saved + offset;
        const double f = loss_fn().item();
        if (!std::isfinite(f))
          throw NumericError("finite_difference_check: non-finite loss when "
                             "perturbing parameter '" + name + "' element " +
                             std::to_string(i));
        return f;
      };
      double numeric = (at(step) - at(-step)) / (2.0 * step);
      if (stencil == Stencil::kCentral4) {
        const double wide = at(2.0 * step) - at(-2.0 * step);
        numeric = (16.0 * step * numeric - wide) / (12.0 * step);
      }
      values[i] = saved;
      const double err =
          std::abs(analytic[i] - numeric) / std::max(floor, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace maskemb
