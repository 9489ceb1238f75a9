// SPDX-License-Identifier: Apache-2.0
#include "csa/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

#include "csa/error.hpp"

namespace csa {

namespace {

std::atomic<std::uint64_t> g_sequence{0};
thread_local bool t_grad_mode = true;

void check_shape(const Shape& shape) {
  for (auto extent : shape) {
    if (extent == 0) {
      throw Error(ErrorKind::Shape, "tensor extents must be positive, got " + shape_to_string(shape));
    }
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

void TensorImpl::accumulate_grad(std::span<const double> g) {
  auto buffer = grad_buffer();
  for (std::size_t i = 0; i < buffer.size(); ++i) buffer[i] += g[i];
}

std::span<double> TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

bool any_requires_grad(const std::vector<Tensor>& inputs) {
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor& t) { return t.defined() && t.requires_grad(); });
}

Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs,
                   std::function<void(std::span<const double>)> backward) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  if (grad_mode_enabled() && any_requires_grad(inputs) && backward) {
    impl->requires_grad = true;
    auto node = std::make_shared<Node>();
    node->sequence = g_sequence.fetch_add(1, std::memory_order_relaxed);
    node->op = op;
    for (auto& t : inputs) {
      if (t.defined()) node->inputs.push_back(t.impl());
    }
    node->backward = std::move(backward);
    impl->grad_fn = std::move(node);
  }
  return Tensor(std::move(impl));
}

}  // namespace detail

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->data.assign(shape_numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (values.size() != shape_numel(shape)) {
    throw Error(ErrorKind::Shape, "value count " + std::to_string(values.size()) +
                                      " does not match shape " + shape_to_string(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!impl_) throw Error(ErrorKind::State, "use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw Error(ErrorKind::Index, "axis " + std::to_string(axis) + " out of range for shape " + shape_to_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  shape();
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  shape();
  return impl_->data;
}

std::vector<double> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

double Tensor::item() const {
  if (numel() != 1) throw Error(ErrorKind::Rank, "item() on tensor of shape " + shape_to_string(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw Error(ErrorKind::Index, "index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw Error(ErrorKind::Index, "index out of range");
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  if (!is_leaf()) throw Error(ErrorKind::State, "requires_grad can only be changed on leaf tensors");
  impl_->requires_grad = value;
  return *this;
}

bool Tensor::is_leaf() const { return impl_ && !impl_->grad_fn; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  shape();
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  shape();
  return impl_->grad_buffer();
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor::from(shape(), to_vector(), false); }

void Tensor::backward() const {
  if (numel() != 1) {
    throw Error(ErrorKind::Rank, "backward requires a scalar, got shape " + shape_to_string(shape()));
  }
  if (!impl_->requires_grad) {
    throw Error(ErrorKind::State, "backward on a tensor that does not require grad");
  }
  if (!impl_->grad_fn) {
    impl_->accumulate_grad(std::vector<double>{1.0});
    return;
  }

  // Collect reachable nodes together with the tensor each one produced.
  std::vector<std::pair<detail::Node*, detail::TensorImpl*>> tape;
  std::unordered_set<const detail::Node*> seen;
  std::vector<detail::TensorImpl*> stack{impl_.get()};
  while (!stack.empty()) {
    auto* t = stack.back();
    stack.pop_back();
    auto* node = t->grad_fn.get();
    if (!node || !seen.insert(node).second) continue;
    if (node->consumed) {
      throw Error(ErrorKind::State,
                  "backward called twice on the same graph; rerun the forward pass first");
    }
    tape.emplace_back(node, t);
    for (const auto& in : node->inputs) stack.push_back(in.get());
  }
  std::sort(tape.begin(), tape.end(),
            [](const auto& a, const auto& b) { return a.first->sequence > b.first->sequence; });

  for (auto& [node, out] : tape) out->grad.assign(out->data.size(), 0.0);
  impl_->grad[0] = 1.0;

  for (auto& [node, out] : tape) {
    node->backward(out->grad);
    node->backward = nullptr;
    node->consumed = true;
  }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_mode) { t_grad_mode = false; }
NoGradGuard::~NoGradGuard() { t_grad_mode = previous_; }

bool grad_mode_enabled() { return t_grad_mode; }

}  // namespace csa
