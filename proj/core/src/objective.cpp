// SPDX-License-Identifier: Apache-2.0
#include "csa/objective.hpp"

#include <cmath>

#include "csa/blocks.hpp"
#include "csa/error.hpp"
#include "csa/ops.hpp"

namespace csa {

Tensor cross_entropy(const Tensor& predicted, const Tensor& targets, LabelMode mode) {
  if (predicted.rank() != 2 || targets.rank() != 2 || predicted.dim(0) != targets.dim(0)) {
    throw Error(ErrorKind::Shape, "cross_entropy: predictions " + shape_to_string(predicted.shape()) + " vs labels " +
                                      shape_to_string(targets.shape()));
  }
  if (predicted.dim(1) != targets.dim(1)) {
    throw Error(ErrorKind::Shape, "cross_entropy: label dimension " + std::to_string(targets.dim(1)) + " != " +
                                      std::to_string(predicted.dim(1)) + " classes");
  }
  const double n = static_cast<double>(predicted.dim(0));
  if (mode == LabelMode::OneHot) {
    return scale(sum(mul(targets, log(clamp_min(predicted, kLogFloor)))), -1.0 / n);
  }
  const Tensor pos = mul(targets, log(clamp_min(predicted, kLogFloor)));
  const Tensor neg_targets = add_scalar(scale(targets, -1.0), 1.0);
  const Tensor neg_probs = add_scalar(scale(predicted, -1.0), 1.0);
  const Tensor negative = mul(neg_targets, log(clamp_min(neg_probs, kLogFloor)));
  return scale(sum(add(pos, negative)), -1.0 / static_cast<double>(predicted.numel()));
}

Tensor l2_reg(const std::vector<Tensor>& weights) {
  Tensor total = Tensor::scalar(0.0);
  for (const auto& w : weights) total = add(total, sum(square(w)));
  return total;
}

Tensor l2_reg(const std::vector<NamedParam>& params) {
  std::vector<Tensor> weights;
  for (const auto& p : params) {
    if (p.role == ParamRole::Weight) weights.push_back(p.tensor);
  }
  return l2_reg(weights);
}

Tensor ortho_reg(const Tensor& m) {
  if (m.rank() != 2) throw Error(ErrorKind::Shape, "ortho_reg expects a [P x K] matrix");
  const std::size_t k = m.dim(1);
  if (k < 2) return Tensor::scalar(0.0);
  std::vector<double> mask(k * k, 1.0);
  for (std::size_t i = 0; i < k; ++i) mask[i * k + i] = 0.0;
  const Tensor gram = matmul(transpose(m), m);
  return sum(square(mul(gram, Tensor::from({k, k}, std::move(mask)))));
}

Tensor ortho_reg_maps(const std::vector<Tensor>& attention_maps) {
  Tensor total = Tensor::scalar(0.0);
  std::size_t contributing = 0;
  for (const auto& a : attention_maps) {
    if (a.dim(1) < 2) continue;
    ++contributing;
    const std::size_t n = a.dim(0);
    Tensor block = Tensor::scalar(0.0);
    for (std::size_t i = 0; i < n; ++i) block = add(block, ortho_reg(flatten_attention(a, i)));
    total = add(total, scale(block, 1.0 / static_cast<double>(n)));
  }
  if (contributing == 0) return total;
  return scale(total, 1.0 / static_cast<double>(contributing));
}

Tensor total_loss(const Tensor& ce, const Tensor& l2, const Tensor& ortho, const ObjectiveConfig& config) {
  return add(add(ce, scale(l2, config.lambda1 / 2.0)), scale(ortho, config.lambda2 / 2.0));
}

// ---------------------------------------------------------------------------

Adam::Adam(std::vector<NamedParam> params, AdamOptions options) : params_(std::move(params)) {
  state_.options = options;
  for (const auto& p : params_) {
    state_.first_moment.emplace_back(p.tensor.numel(), 0.0);
    state_.second_moment.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::step() {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw Error(ErrorKind::Numeric, "non-finite gradient in parameter " + p.name);
    }
  }
  const auto& o = state_.options;
  ++state_.step_count;
  const double t = static_cast<double>(state_.step_count);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].tensor;
    if (!p.has_grad()) continue;
    auto values = p.mutable_data();
    const auto grad = p.grad();
    auto& m = state_.first_moment[i];
    auto& v = state_.second_moment[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad[j];
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g;
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g * g;
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      values[j] -= o.lr * m_hat / (std::sqrt(v_hat) + o.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

}  // namespace csa
