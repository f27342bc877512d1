// SPDX-License-Identifier: Apache-2.0

#include "hsd/tensor.hpp"

#include <numeric>
#include <sstream>
#include <stdexcept>

namespace hsd {

namespace detail {

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor shape entries must be positive, got " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_to_string(const std::vector<std::int64_t>& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

void accumulate_grad(Tensor& tensor, std::span<const double> contribution) {
  auto g = tensor.grad();
  if (g.size() != contribution.size()) {
    throw std::logic_error("gradient size mismatch during accumulation");
  }
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += contribution[i];
}

}  // namespace detail

Tensor::Tensor(std::vector<std::int64_t> shape, bool requires_grad) {
  impl_ = std::make_shared<Impl>();
  const std::int64_t n = detail::shape_numel(shape);
  impl_->shape = std::move(shape);
  impl_->data.assign(static_cast<std::size_t>(n), 0.0);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::int64_t> shape, double value) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = value;
  return t;
}

Tensor Tensor::from_data(std::vector<std::int64_t> shape, std::vector<double> values,
                         bool requires_grad) {
  const std::int64_t n = detail::shape_numel(shape);
  if (static_cast<std::size_t>(n) != values.size()) {
    throw std::invalid_argument("from_data: " + std::to_string(values.size()) +
                                " values for shape " + detail::shape_to_string(shape));
  }
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data.assign(values.begin(), values.end());
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

const std::vector<std::int64_t>& Tensor::shape() const { return impl_->shape; }

std::int64_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) throw std::out_of_range("tensor axis out of range");
  return impl_->shape[axis];
}

std::size_t Tensor::rank() const { return impl_->shape.size(); }

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

std::span<double> Tensor::values() { return impl_->data; }
std::span<const double> Tensor::values() const { return impl_->data; }

double Tensor::item() const {
  if (impl_->data.size() != 1) {
    throw std::logic_error("item() on tensor of shape " + shape_str());
  }
  return impl_->data[0];
}

namespace {
std::size_t flat_index(const std::vector<std::int64_t>& shape,
                       std::initializer_list<std::int64_t> index) {
  if (index.size() != shape.size()) throw std::out_of_range("index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::int64_t i : index) {
    if (i < 0 || i >= shape[axis]) throw std::out_of_range("tensor index out of range");
    flat = flat * static_cast<std::size_t>(shape[axis]) + static_cast<std::size_t>(i);
    ++axis;
  }
  return flat;
}
}  // namespace

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  return impl_->data[flat_index(impl_->shape, index)];
}

double& Tensor::at(std::initializer_list<std::int64_t> index) {
  return impl_->data[flat_index(impl_->shape, index)];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool requires_grad) { impl_->requires_grad = requires_grad; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<double> Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

std::span<const double> Tensor::grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  for (double& g : impl_->grad) g = 0.0;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  return t;
}

bool Tensor::same_storage(const Tensor& other) const { return impl_ == other.impl_; }

std::string Tensor::shape_str() const { return detail::shape_to_string(impl_->shape); }

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
Tape::Scope::~Scope() { g_active_tape = previous_; }

Tape::NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
Tape::NoGradScope::~NoGradScope() { g_active_tape = previous_; }

void Tape::record(std::function<void()> backward_step) {
  nodes_.push_back(std::move(backward_step));
}

void Tape::backward(Tensor root) {
  if (root.numel() != 1) {
    throw std::invalid_argument("backward: root must be a scalar, got shape " + root.shape_str());
  }
  root.grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

}  // namespace hsd
