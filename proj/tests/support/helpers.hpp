// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "csa/layers.hpp"
#include "csa/ops.hpp"
#include "csa/tensor.hpp"
#include "oracles.hpp"

namespace testing_support {

inline csa::Tensor random_tensor(csa::Shape shape, std::uint64_t seed, double scale = 1.0, bool grad = false) {
  const auto n = csa::shape_numel(shape);
  return csa::Tensor::from(std::move(shape), oracle::random_values(n, seed, scale), grad);
}

// sum(R * t) for a fixed random R; turns any tensor output into a scalar with
// a generic gradient.
inline csa::Tensor weighted_sum(const csa::Tensor& t, std::uint64_t seed) {
  return csa::sum(csa::mul(t, random_tensor(t.shape(), seed ^ 0x9e3779b97f4a7c15ULL)));
}

// The elements of R * t, flattened. Gradient checks sum them after
// differencing each one.
inline csa::Tensor weighted_terms(const csa::Tensor& t, std::uint64_t seed) {
  return csa::reshape(csa::mul(t, random_tensor(t.shape(), seed ^ 0x9e3779b97f4a7c15ULL)), {t.numel()});
}

// Infinite when the lengths differ.
inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Moves BN affine terms and running statistics off their initial values so
// evaluation-mode BN is a generic affine map.
inline void randomize_norms(const csa::ParamCollector& pc, std::uint64_t seed, double spread = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-spread, spread);
  for (const auto& p : pc.params()) {
    if (p.role != csa::ParamRole::Norm && p.role != csa::ParamRole::Bias) continue;
    const bool gamma = p.name.ends_with(".gamma");
    for (auto& v : csa::Tensor(p.tensor).mutable_data()) v = gamma ? 1.0 + u(rng) : u(rng);
  }
  for (const auto& b : pc.buffers()) {
    const bool var = b.name.ends_with(".running_var");
    for (auto& v : *b.values) v = var ? 1.0 + u(rng) : u(rng);
  }
}

// Copies every parameter and buffer whose name exists in both collections.
inline std::size_t copy_matching(const csa::ParamCollector& from, const csa::ParamCollector& to) {
  std::size_t copied = 0;
  for (const auto& dst : to.params())
    for (const auto& src : from.params())
      if (src.name == dst.name) {
        auto d = csa::Tensor(dst.tensor).mutable_data();
        std::copy(src.tensor.data().begin(), src.tensor.data().end(), d.begin());
        ++copied;
      }
  for (const auto& dst : to.buffers())
    for (const auto& src : from.buffers())
      if (src.name == dst.name) *dst.values = *src.values;
  return copied;
}

}  // namespace testing_support
