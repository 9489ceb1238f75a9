// SPDX-License-Identifier: Apache-2.0
//
// Feature-processing blocks. Every block ends in BN -> ReLU -> 2x2 max pool,
// so each block halves both spatial extents (floor).
//
//   cnn block:  conv3x3 -> BN -> ReLU -> pool
//   res block:  pool(ReLU(BN(x + f_res(x))))
//   csa block:  pool(ReLU(BN(x + alpha * f_res(x))))
//
// f_res is the bottleneck branch conv1x1 -> BN -> ReLU -> conv3x3 -> BN -> ReLU
// -> conv1x1 (linear), and alpha in [0,1] comes from a small convolutional
// attention network applied to the block input.
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "csa/config.hpp"
#include "csa/layers.hpp"

namespace csa {

struct BlockOutput {
  Tensor features;  // pooled output
  Tensor pre_pool;  // x + alpha * f_res(x) for residual blocks, conv output for cnn blocks
  Tensor residual;  // f_res(x), residual blocks only
  Tensor attention; // [N,C,F,T], [N,1,F,T] or [N,1,1,T]; CSA blocks only
};

/// Flattened per-channel maps of clip `n` as a [F*T x K] matrix, one column
/// per attention channel.
Tensor flatten_attention(const Tensor& attention, std::size_t n);

class Block {
 public:
  virtual ~Block() = default;
  virtual BlockOutput forward(const Tensor& x, bool training) = 0;
  virtual void init(Rng& rng) = 0;
  virtual void collect(ParamCollector& out, const std::string& prefix) = 0;
  virtual std::size_t in_channels() const = 0;
  virtual std::size_t out_channels() const = 0;
};

class CnnBlock final : public Block {
 public:
  CnnBlock(std::size_t in_ch, std::size_t out_ch);

  BlockOutput forward(const Tensor& x, bool training) override;
  void init(Rng& rng) override;
  void collect(ParamCollector& out, const std::string& prefix) override;
  std::size_t in_channels() const override { return in_ch_; }
  std::size_t out_channels() const override { return out_ch_; }

  Conv2d conv;
  BatchNorm2d bn;

 private:
  std::size_t in_ch_, out_ch_;
};

struct ResidualBranch {
  ResidualBranch() = default;
  ResidualBranch(std::size_t channels, std::size_t bottleneck);

  Tensor operator()(const Tensor& x, bool training);
  void init(Rng& rng);
  void collect(ParamCollector& out, const std::string& prefix);

  Conv2d reduce;
  BatchNorm2d bn_reduce;
  Conv2d spatial;
  BatchNorm2d bn_spatial;
  Conv2d expand;
};

class ResBlock final : public Block {
 public:
  ResBlock(std::size_t channels, std::size_t bottleneck_ratio);

  BlockOutput forward(const Tensor& x, bool training) override;
  void init(Rng& rng) override;
  void collect(ParamCollector& out, const std::string& prefix) override;
  std::size_t in_channels() const override { return channels_; }
  std::size_t out_channels() const override { return channels_; }

  ResidualBranch branch;
  BatchNorm2d post_bn;

 private:
  std::size_t channels_;
};

/// Feed-forward attention network producing alpha from the block input.
///
/// Context conv (k x k) -> BN -> ReLU -> 1x1 conv -> sigmoid, with the
/// channel connectivity chosen by the variant:
///   CC_SAM_3D           C -> C full convs, one map per channel
///   CW_SAM_2_5D         depth-wise convs, one map per channel
///   CW_SAM_2_5D_SHARED  one single-channel kernel pair applied to every channel
///   SAM_2D              C -> 1, one map shared by all channels
///   TAM_1D              SAM_2D averaged over frequency after the sigmoid
/// With down-up sampling the input is reduced 2x2 (stride-2 depth-wise conv,
/// average or max pool) before the context conv, and the logits are bilinearly
/// resized back to the input grid before the sigmoid.
class AttentionNet {
 public:
  AttentionNet() = default;
  AttentionNet(std::size_t channels, const AttentionVariant& variant);

  Tensor operator()(const Tensor& x, bool training);
  void init(Rng& rng);
  void collect(ParamCollector& out, const std::string& prefix);

  const AttentionVariant& variant() const { return variant_; }
  /// Number of maps produced (channel extent of alpha).
  std::size_t map_channels() const;

  Conv2d down;
  Conv2d context;
  BatchNorm2d bn;
  Conv2d project;

 private:
  std::size_t channels_ = 0;
  AttentionVariant variant_;
};

enum class AlphaOverride { None, Ones, Zeros };

class CsaBlock final : public Block {
 public:
  CsaBlock(std::size_t channels, std::size_t bottleneck_ratio, const AttentionVariant& variant);

  BlockOutput forward(const Tensor& x, bool training) override;
  void init(Rng& rng) override;
  void collect(ParamCollector& out, const std::string& prefix) override;
  std::size_t in_channels() const override { return channels_; }
  std::size_t out_channels() const override { return channels_; }

  ResidualBranch branch;
  AttentionNet attention;
  BatchNorm2d post_bn;
  /// Replaces alpha by an exact constant; the attention network is skipped.
  AlphaOverride alpha_override = AlphaOverride::None;

 private:
  std::size_t channels_;
};

/// Stack of 1..4 blocks. ResCNN and CSA stacks start with a plain cnn block
/// that lifts the single spectrogram channel to `channels`.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(const ModelConfig& config);

  struct Output {
    Tensor features;
    std::vector<BlockOutput> blocks;
  };

  Output forward(const Tensor& x, bool training);
  void init(Rng& rng);
  void collect(ParamCollector& out, const std::string& prefix);

  std::size_t size() const { return blocks_.size(); }
  Block& block(std::size_t i) { return *blocks_.at(i); }
  /// Sets the override on every CSA block in the stack.
  void set_alpha_override(AlphaOverride mode);

 private:
  std::vector<std::unique_ptr<Block>> blocks_;
};

}  // namespace csa
