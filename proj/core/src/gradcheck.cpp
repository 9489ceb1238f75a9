// SPDX-License-Identifier: Apache-2.0
#include "csa/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "csa/error.hpp"
#include "csa/ops.hpp"

namespace csa {

namespace {

constexpr double kKinkThreshold = 1e-5;

std::vector<double> evaluate(const std::function<Tensor()>& f, std::size_t param, std::size_t coordinate) {
  NoGradGuard guard;
  std::vector<double> v = f().to_vector();
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw Error(ErrorKind::Numeric, "non-finite function value while perturbing parameter " + std::to_string(param) +
                                          " coordinate " + std::to_string(coordinate));
    }
  }
  return v;
}

}  // namespace

GradCheckResult finite_difference_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                        const GradCheckOptions& options) {
  if (!(options.epsilon > 0)) throw Error(ErrorKind::Config, "finite-difference epsilon must be positive");
  if (options.order != 2 && options.order != 4) throw Error(ErrorKind::Config, "finite-difference order must be 2 or 4");
  for (auto& p : params) {
    if (!p.is_leaf()) throw Error(ErrorKind::State, "gradient check parameters must be leaves");
    p.set_requires_grad(true);
    p.zero_grad();
  }
  Tensor out = f();
  if (out.numel() == 0) throw Error(ErrorKind::Rank, "gradient check needs a non-empty output");
  Tensor loss = sum(out);
  if (!std::isfinite(loss.item())) throw Error(ErrorKind::Numeric, "non-finite function value at the base point");
  if (loss.requires_grad()) loss.backward();

  GradCheckResult result;
  const double eps = options.epsilon;
  std::vector<double> base;
  if (options.order == 4 && options.skip_kinks) base = evaluate(f, 0, 0);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    const std::size_t n = p.numel();
    std::vector<double> analytic(n, 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    std::size_t step = 1;
    if (options.max_coordinates_per_param && n > options.max_coordinates_per_param) {
      step = (n + options.max_coordinates_per_param - 1) / options.max_coordinates_per_param;
    }
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < n; i += step) {
      const double original = values[i];
      auto at = [&](double offset) {
        values[i] = original + offset;
        auto v = evaluate(f, pi, i);
        values[i] = original;
        return v;
      };
      // Differences are taken per output element before summing, so terms the
      // coordinate does not touch cancel exactly.
      double numeric = 0.0, magnitude = 0.0;
      const auto up = at(eps), down = at(-eps);
      if (options.order == 2) {
        for (std::size_t k = 0; k < up.size(); ++k) {
          numeric += up[k] - down[k];
          magnitude += std::abs(up[k] - down[k]);
        }
        numeric /= 2.0 * eps;
        magnitude /= 2.0 * eps;
      } else {
        const auto up2 = at(2.0 * eps), down2 = at(-2.0 * eps);
        for (std::size_t k = 0; k < up.size(); ++k) {
          const double term = 8.0 * (up[k] - down[k]) - (up2[k] - down2[k]);
          numeric += term;
          magnitude += std::abs(term);
        }
        numeric /= 12.0 * eps;
        magnitude /= 12.0 * eps;
        if (options.skip_kinks) {
          // Second differences of the four one-sided slopes vanish to O(eps^2)
          // for a smooth function; a ReLU or max switching inside the stencil
          // leaves a step of the size of the slope change.
          double d1 = 0.0, d2 = 0.0;
          for (std::size_t k = 0; k < up.size(); ++k) {
            const double s1 = down[k] - down2[k], s2 = base[k] - down[k], s3 = up[k] - base[k], s4 = up2[k] - up[k];
            d1 += s3 - 2.0 * s2 + s1;
            d2 += s4 - 2.0 * s3 + s2;
          }
          const double bend = std::max(std::abs(d1), std::abs(d2)) / eps;
          if (bend > kKinkThreshold * std::max({std::abs(numeric), magnitude, 1e-8})) {
            ++result.kinks_skipped;
            continue;
          }
        }
      }
      // Relative to the scale of the summed terms: a sum that cancels down to a
      // tiny value cannot be resolved better than its terms.
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), magnitude, 1e-8});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      ++result.coordinates_checked;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_param = pi;
        result.worst_coordinate = i;
        result.analytic = analytic[i];
        result.numeric = numeric;
        result.term_magnitude = magnitude;
      }
    }
  }
  return result;
}

}  // namespace csa
