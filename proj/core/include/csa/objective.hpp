// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "csa/config.hpp"
#include "csa/layers.hpp"

namespace csa {

struct ObjectiveConfig {
  double lambda1 = 1e-4;
  double lambda2 = 0.1;
  LabelMode label_mode = LabelMode::OneHot;
};

inline constexpr double kLogFloor = 1e-12;

/// predicted [N, c] clip probabilities, targets [N, c].
/// One-hot: -(1/N) sum y . log(max(p, 1e-12)).
/// Multi-hot: binary cross-entropy averaged over every (clip, class) pair.
Tensor cross_entropy(const Tensor& predicted, const Tensor& targets, LabelMode mode);

/// Sum of squares over tensors tagged ParamRole::Weight.
Tensor l2_reg(const std::vector<NamedParam>& params);
Tensor l2_reg(const std::vector<Tensor>& weights);

/// ||M'M * (1 - I)||_F^2 for M [P x K]; zero when K < 2.
Tensor ortho_reg(const Tensor& m);

/// Orthogonality penalty over a list of attention maps [N, K, F, T]: the mean
/// over clips per block, then the mean over blocks with K >= 2.
Tensor ortho_reg_maps(const std::vector<Tensor>& attention_maps);

/// ce + lambda1/2 * l2 + lambda2/2 * ortho.
Tensor total_loss(const Tensor& ce, const Tensor& l2, const Tensor& ortho, const ObjectiveConfig& config);

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamOptions options;
  std::uint64_t step_count = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// Bias-corrected Adam over a fixed, ordered parameter list.
class Adam {
 public:
  Adam(std::vector<NamedParam> params, AdamOptions options);

  /// Applies one update from the accumulated gradients. Parameters without a
  /// gradient are skipped. Throws a numeric error,
  /// leaving every parameter untouched, if any gradient is non-finite.
  void step();
  void zero_grad();

  const AdamState& state() const { return state_; }
  AdamState& mutable_state() { return state_; }
  const std::vector<NamedParam>& params() const { return params_; }

 private:
  std::vector<NamedParam> params_;
  AdamState state_;
};

}  // namespace csa
