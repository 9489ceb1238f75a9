// SPDX-License-Identifier: Apache-2.0
//
// Differentiable layers over [N, C, H, W] feature maps and [N, D] vectors,
// plus the small parameter-holding modules the blocks are assembled from.
#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "csa/tensor.hpp"

namespace csa {

using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------
// Parameter bookkeeping

/// Weights are L2-regularized; biases and normalization affine terms are not.
enum class ParamRole { Weight, Bias, Norm };

struct NamedParam {
  std::string name;
  Tensor tensor;
  ParamRole role;
};

struct NamedBuffer {
  std::string name;
  std::vector<double>* values;
};

class ParamCollector {
 public:
  void param(const std::string& name, const Tensor& t, ParamRole role);
  void buffer(const std::string& name, std::vector<double>& values);

  const std::vector<NamedParam>& params() const { return params_; }
  const std::vector<NamedBuffer>& buffers() const { return buffers_; }
  std::size_t scalar_count() const;

 private:
  std::vector<NamedParam> params_;
  std::vector<NamedBuffer> buffers_;
};

// ---------------------------------------------------------------------------
// Functional ops

struct Conv2dOptions {
  std::pair<std::size_t, std::size_t> stride{1, 1};
  std::pair<std::size_t, std::size_t> padding{0, 0};
  std::size_t groups = 1;
};

/// Cross-correlation. weight is [out, in/groups, kH, kW]; bias may be undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dOptions& options = {});

struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;
};

/// Channel axis is 1; statistics are taken over every other axis. Training
/// mode updates `stats` with the given momentum (unbiased variance).
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, bool training,
                  double momentum = 0.1, double epsilon = 1e-5);

enum class PoolMode { Max, Avg };

/// Floor output extents: ragged trailing rows/columns are dropped.
Tensor pool2d(const Tensor& x, PoolMode mode, std::pair<std::size_t, std::size_t> window = {2, 2},
              std::pair<std::size_t, std::size_t> stride = {2, 2});

/// Half-pixel (align_corners = false) bilinear resize to a larger grid.
Tensor bilinear_upsample(const Tensor& x, std::size_t height, std::size_t width);

Tensor softmax(const Tensor& x, std::size_t axis);

/// x [N, D], weight [C, D], bias [C].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct GruParams {
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;
  Tensor w_input;   // [3H, D], gate rows ordered (update, reset, candidate)
  Tensor w_hidden;  // [3H, H]
  Tensor bias;      // [3H]

  static GruParams create(std::size_t input_size, std::size_t hidden_size);
  void init(Rng& rng);
  void collect(ParamCollector& out, const std::string& prefix) const;
};

/// z = sig(Wz x + Uz h + bz), r = sig(Wr x + Ur h + br),
/// n = tanh(Wn x + Un (r * h) + bn), h' = (1 - z) * h + z * n.
Tensor gru_cell(const Tensor& x, const Tensor& h_prev, const GruParams& p);

/// Z [N, D, T] -> [N, 2H, T]; forward-direction states first. Zero initial
/// states. When `lengths` is given, steps t >= lengths[n] leave the state of
/// clip n untouched, so the reverse direction starts at each clip's last valid
/// frame.
Tensor bgru_layer(const Tensor& z, const GruParams& forward, const GruParams& backward,
                  const std::vector<std::size_t>& lengths = {});

// ---------------------------------------------------------------------------
// Modules

struct Conv2d {
  Tensor weight;
  Tensor bias;
  Conv2dOptions options;

  Conv2d() = default;
  Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, Conv2dOptions options = {}, bool with_bias = true);

  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, options); }
  /// He-uniform weights, zero bias.
  void init(Rng& rng);
  void collect(ParamCollector& out, const std::string& prefix) const;
};

struct BatchNorm2d {
  Tensor gamma;
  Tensor beta;
  BatchNormStats stats;
  double momentum = 0.1;
  double epsilon = 1e-5;

  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels);

  Tensor operator()(const Tensor& x, bool training) { return batch_norm(x, gamma, beta, stats, training, momentum, epsilon); }
  void collect(ParamCollector& out, const std::string& prefix);
};

struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in_features, std::size_t out_features);

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  void init(Rng& rng);
  void collect(ParamCollector& out, const std::string& prefix) const;
};

}  // namespace csa
