// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "csa/tensor.hpp"

namespace csa {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_coordinate = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double term_magnitude = 0.0;  // sum of |per-element difference quotients| at the worst coordinate
  std::size_t coordinates_checked = 0;
  /// Coordinates left out because a kink (ReLU, max) lies inside the stencil.
  std::size_t kinks_skipped = 0;
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  /// Check at most this many coordinates per parameter (0 = all), picked with a
  /// fixed stride so the selection is deterministic.
  std::size_t max_coordinates_per_param = 0;
  /// Accuracy order of the central stencil: 2 uses f(x +- eps), 4 adds
  /// f(x +- 2 eps) and cancels the eps^2 truncation term.
  int order = 4;
  /// With order 4: skip coordinates whose one-sided slopes show a kink
  /// within +-2 eps, where no finite difference estimates the derivative.
  bool skip_kinks = true;
};

/// Central-difference check (same step eps for either order) of the
/// reverse-mode gradient of the sum of the elements `f` returns.
/// Relative error per coordinate is |a - n| / max(|a|, |n|, m, 1e-8), where m
/// is the sum over output elements of |per-element difference quotient| (equal
/// to |n| for a scalar output). `f` must be
/// deterministic and rebuild its graph on every call.
GradCheckResult finite_difference_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                        const GradCheckOptions& options = {});

}  // namespace csa
