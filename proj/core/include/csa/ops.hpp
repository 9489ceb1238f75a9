// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitive ops. Binary ops broadcast by aligning trailing
// dimensions; each aligned pair must be equal or one of them must be 1.
#pragma once

#include <vector>

#include "csa/tensor.hpp"

namespace csa {

Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor neg(const Tensor& a);
Tensor square(const Tensor& a);

Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
/// Throws a domain error on non-positive entries.
Tensor log(const Tensor& a);
/// max(a, floor); the gradient is zero where the floor is active.
Tensor clamp_min(const Tensor& a, double floor);

enum class ElementwiseKind { Add, Sub, Mul, Sigmoid, Relu, Tanh, Log, Exp, Scale };

/// Dispatch form of the elementwise family. `b` is required for binary kinds
/// and ignored otherwise; `constant` is used by Scale.
Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b = {}, double constant = 1.0);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor reshape(const Tensor& a, Shape shape);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

enum class ReduceMode { Sum, Mean, Max };

/// Reduced axes are kept with extent 1. Max routes the gradient to the first
/// maximal element in row-major order.
Tensor reduce(const Tensor& a, const std::vector<std::size_t>& axes, ReduceMode mode);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

}  // namespace csa
