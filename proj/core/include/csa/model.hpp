// SPDX-License-Identifier: Apache-2.0
//
// Whole-model composition: feature extractor -> frequency average pooling ->
// BGRU stack -> per-step classifier -> per-step softmax (or sigmoid for
// multi-label tagging) -> mean over steps.
#pragma once

#include <cstdint>
#include <vector>

#include "csa/blocks.hpp"
#include "csa/config.hpp"
#include "csa/layers.hpp"

namespace csa {

enum class OutputMode { SoftmaxSingleLabel, SigmoidMultiLabel };

struct ClipPrediction {
  Tensor per_step;    // [N, c, T_L]
  Tensor aggregated;  // [N, c]
};

/// [N, C, F, T] -> [N, C, T], mean over the frequency axis.
Tensor freq_avg_pool(const Tensor& x);

/// [N, c, T] -> [N, c]. With `lengths`, clip n averages its first lengths[n]
/// steps only.
Tensor aggregate(const Tensor& per_step, const std::vector<std::size_t>& lengths = {});

class Head {
 public:
  Head() = default;
  Head(std::size_t input_size, std::size_t gru_hidden, std::size_t layers, std::size_t num_classes, OutputMode mode);

  /// z [N, D, T] -> per-step and aggregated class scores.
  ClipPrediction forward(const Tensor& z, const std::vector<std::size_t>& lengths = {}) const;
  void init(Rng& rng);
  void collect(ParamCollector& out, const std::string& prefix) const;

  std::vector<std::pair<GruParams, GruParams>> bgru;
  Linear classifier;
  OutputMode mode = OutputMode::SoftmaxSingleLabel;
};

struct ForwardResult {
  ClipPrediction prediction;
  std::vector<Tensor> attention_maps;  // one per CSA block, pre-pooling resolution
  Tensor features;                     // feature-extractor output [N, C, F_L, T_L]
  std::vector<std::size_t> step_lengths;
};

class Model {
 public:
  explicit Model(const ModelConfig& config);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// Deterministic initialization from `seed`.
  void init(std::uint64_t seed);

  /// x [N, 1, F, T]. `frame_lengths` gives the valid frame count per clip for
  /// zero-padded batches; empty means every frame is valid.
  ForwardResult forward(const Tensor& x, bool training, const std::vector<std::size_t>& frame_lengths = {});

  /// Trainable tensors and BN running statistics, in a fixed order.
  ParamCollector parameters();

  const ModelConfig& config() const { return config_; }
  FeatureExtractor& features() { return features_; }
  Head& head() { return head_; }

  /// Smallest number of frames (and mel bands) the stack accepts.
  std::size_t min_extent() const;

 private:
  ModelConfig config_;
  FeatureExtractor features_;
  Head head_;
};

/// Single clip [1, 1, 60, T] through a model in evaluation mode.
ForwardResult forward_full(Model& model, const Tensor& clip_msp);

}  // namespace csa
