// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major f64 tensor with a dynamically recorded reverse-mode tape.
//
// A Tensor is a shared handle: copies alias the same storage. Every op that
// consumes a tensor with requires_grad() records a node carrying a sequence
// number; backward() replays the reachable nodes in descending sequence order,
// so gradient accumulation order is fixed by the order of the forward pass.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace csa {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

struct Node;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;

  void accumulate_grad(std::span<const double> g);
  std::span<double> grad_buffer();  // allocates zeros on first use
};

using ImplPtr = std::shared_ptr<TensorImpl>;

struct Node {
  std::uint64_t sequence = 0;
  std::string op;
  std::vector<ImplPtr> inputs;
  // Receives the gradient w.r.t. the node output and accumulates input grads.
  std::function<void(std::span<const double>)> backward;
  bool consumed = false;
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(detail::ImplPtr impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(impl_); }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Mutable view for leaves (parameter init, optimizer updates, test probes).
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Copy of the values with no graph history.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  /// Reverse sweep from this scalar. Throws on non-scalar outputs and on
  /// graphs that were already swept.
  void backward() const;

  const detail::ImplPtr& impl() const { return impl_; }

 private:
  detail::ImplPtr impl_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

namespace detail {

/// Builds an op result; records a tape node when grad mode is on and any
/// input requires grad. `backward` may be empty when no input needs grads.
Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs,
                   std::function<void(std::span<const double>)> backward);

bool any_requires_grad(const std::vector<Tensor>& inputs);

}  // namespace detail

}  // namespace csa
