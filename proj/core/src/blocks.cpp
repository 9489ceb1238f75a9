// SPDX-License-Identifier: Apache-2.0
#include "csa/blocks.hpp"

#include "csa/error.hpp"
#include "csa/ops.hpp"

namespace csa {

namespace {

Tensor post_process(BatchNorm2d& bn, const Tensor& pre, bool training) {
  return pool2d(relu(bn(pre, training)), PoolMode::Max);
}

void require_channels(const Tensor& x, std::size_t channels, const char* block) {
  if (x.rank() != 4) throw Error(ErrorKind::Shape, std::string(block) + " expects [N,C,F,T], got " + shape_to_string(x.shape()));
  if (x.dim(1) != channels) {
    throw Error(ErrorKind::Shape, std::string(block) + " expects " + std::to_string(channels) + " input channels, got " +
                                      std::to_string(x.dim(1)));
  }
  if (x.dim(2) < 2 || x.dim(3) < 2) {
    throw Error(ErrorKind::Geometry, std::string(block) + " needs spatial extents >= 2, got " + shape_to_string(x.shape()));
  }
}

Conv2dOptions same_padding(std::size_t kernel, std::size_t groups = 1) {
  Conv2dOptions o;
  o.padding = {kernel / 2, kernel / 2};
  o.groups = groups;
  return o;
}

}  // namespace

Tensor flatten_attention(const Tensor& attention, std::size_t n) {
  if (attention.rank() != 4) throw Error(ErrorKind::Shape, "attention maps must be rank 4");
  const std::size_t k = attention.dim(1);
  const std::size_t p = attention.dim(2) * attention.dim(3);
  return transpose(reshape(slice(attention, 0, n, 1), {k, p}));
}

// ---------------------------------------------------------------------------

CnnBlock::CnnBlock(std::size_t in_ch, std::size_t out_ch)
    : conv(in_ch, out_ch, 3, same_padding(3), false), bn(out_ch), in_ch_(in_ch), out_ch_(out_ch) {}

BlockOutput CnnBlock::forward(const Tensor& x, bool training) {
  require_channels(x, in_ch_, "cnn block");
  BlockOutput out;
  out.pre_pool = conv(x);
  out.features = post_process(bn, out.pre_pool, training);
  return out;
}

void CnnBlock::init(Rng& rng) { conv.init(rng); }

void CnnBlock::collect(ParamCollector& out, const std::string& prefix) {
  conv.collect(out, prefix + ".conv");
  bn.collect(out, prefix + ".bn");
}

// ---------------------------------------------------------------------------

ResidualBranch::ResidualBranch(std::size_t channels, std::size_t bottleneck)
    : reduce(channels, bottleneck, 1, {}, false),
      bn_reduce(bottleneck),
      spatial(bottleneck, bottleneck, 3, same_padding(3), false),
      bn_spatial(bottleneck),
      expand(bottleneck, channels, 1, {}, false) {}

Tensor ResidualBranch::operator()(const Tensor& x, bool training) {
  Tensor h = relu(bn_reduce(reduce(x), training));
  h = relu(bn_spatial(spatial(h), training));
  return expand(h);
}

void ResidualBranch::init(Rng& rng) {
  reduce.init(rng);
  spatial.init(rng);
  expand.init(rng);
}

void ResidualBranch::collect(ParamCollector& out, const std::string& prefix) {
  reduce.collect(out, prefix + ".reduce");
  bn_reduce.collect(out, prefix + ".bn_reduce");
  spatial.collect(out, prefix + ".spatial");
  bn_spatial.collect(out, prefix + ".bn_spatial");
  expand.collect(out, prefix + ".expand");
}

ResBlock::ResBlock(std::size_t channels, std::size_t bottleneck_ratio)
    : branch(channels, channels / bottleneck_ratio), post_bn(channels), channels_(channels) {}

BlockOutput ResBlock::forward(const Tensor& x, bool training) {
  require_channels(x, channels_, "residual block");
  BlockOutput out;
  out.residual = branch(x, training);
  out.pre_pool = add(x, out.residual);
  out.features = post_process(post_bn, out.pre_pool, training);
  return out;
}

void ResBlock::init(Rng& rng) { branch.init(rng); }

void ResBlock::collect(ParamCollector& out, const std::string& prefix) {
  branch.collect(out, prefix + ".branch");
  post_bn.collect(out, prefix + ".post_bn");
}

// ---------------------------------------------------------------------------

AttentionNet::AttentionNet(std::size_t channels, const AttentionVariant& variant)
    : channels_(channels), variant_(variant) {
  const std::size_t k = variant.context_kernel;
  if (k != 1 && k != 3) throw Error(ErrorKind::Config, "attention context kernel must be 1 or 3");
  if (variant.sampling == Sampling::ConvDownUp) {
    Conv2dOptions o;
    o.stride = {2, 2};
    o.groups = channels;
    down = Conv2d(channels, channels, 2, o);
  }
  switch (variant.kind) {
    case AttentionKind::CC_SAM_3D:
      context = Conv2d(channels, channels, k, same_padding(k), false);
      bn = BatchNorm2d(channels);
      project = Conv2d(channels, channels, 1);
      break;
    case AttentionKind::CW_SAM_2_5D:
      context = Conv2d(channels, channels, k, same_padding(k, channels), false);
      bn = BatchNorm2d(channels);
      project = Conv2d(channels, channels, 1, same_padding(1, channels));
      break;
    case AttentionKind::CW_SAM_2_5D_SHARED:
      context = Conv2d(1, 1, k, same_padding(k), false);
      bn = BatchNorm2d(channels);
      project = Conv2d(1, 1, 1);
      break;
    case AttentionKind::SAM_2D:
    case AttentionKind::TAM_1D:
      context = Conv2d(channels, 1, k, same_padding(k), false);
      bn = BatchNorm2d(1);
      project = Conv2d(1, 1, 1);
      break;
  }
}

std::size_t AttentionNet::map_channels() const {
  switch (variant_.kind) {
    case AttentionKind::CC_SAM_3D:
    case AttentionKind::CW_SAM_2_5D:
    case AttentionKind::CW_SAM_2_5D_SHARED:
      return channels_;
    default:
      return 1;
  }
}

Tensor AttentionNet::operator()(const Tensor& x, bool training) {
  const std::size_t n = x.dim(0), c = x.dim(1), f = x.dim(2), t = x.dim(3);
  Tensor h = x;
  switch (variant_.sampling) {
    case Sampling::None: break;
    case Sampling::ConvDownUp: h = down(h); break;
    case Sampling::AvgPoolDownUp: h = pool2d(h, PoolMode::Avg); break;
    case Sampling::MaxPoolDownUp: h = pool2d(h, PoolMode::Max); break;
  }
  const std::size_t hf = h.dim(2), ht = h.dim(3);
  Tensor logits;
  if (variant_.kind == AttentionKind::CW_SAM_2_5D_SHARED) {
    Tensor per_channel = reshape(context(reshape(h, {n * c, 1, hf, ht})), {n, c, hf, ht});
    per_channel = relu(bn(per_channel, training));
    logits = reshape(project(reshape(per_channel, {n * c, 1, hf, ht})), {n, c, hf, ht});
  } else {
    logits = project(relu(bn(context(h), training)));
  }
  if (variant_.sampling != Sampling::None) logits = bilinear_upsample(logits, f, t);
  Tensor alpha = sigmoid(logits);
  if (variant_.kind == AttentionKind::TAM_1D) alpha = reduce(alpha, {2}, ReduceMode::Mean);
  return alpha;
}

void AttentionNet::init(Rng& rng) {
  if (down.weight.defined()) down.init(rng);
  context.init(rng);
  project.init(rng);
}

void AttentionNet::collect(ParamCollector& out, const std::string& prefix) {
  if (down.weight.defined()) down.collect(out, prefix + ".down");
  context.collect(out, prefix + ".context");
  bn.collect(out, prefix + ".bn");
  project.collect(out, prefix + ".project");
}

CsaBlock::CsaBlock(std::size_t channels, std::size_t bottleneck_ratio, const AttentionVariant& variant)
    : branch(channels, channels / bottleneck_ratio),
      attention(channels, variant),
      post_bn(channels),
      channels_(channels) {}

BlockOutput CsaBlock::forward(const Tensor& x, bool training) {
  require_channels(x, channels_, "csa block");
  BlockOutput out;
  out.residual = branch(x, training);
  if (alpha_override == AlphaOverride::None) {
    out.attention = attention(x, training);
  } else {
    const double value = alpha_override == AlphaOverride::Ones ? 1.0 : 0.0;
    const bool temporal = attention.variant().kind == AttentionKind::TAM_1D;
    out.attention = Tensor::full({x.dim(0), attention.map_channels(), temporal ? 1 : x.dim(2), x.dim(3)}, value);
  }
  out.pre_pool = add(x, mul(out.attention, out.residual));
  out.features = post_process(post_bn, out.pre_pool, training);
  return out;
}

void CsaBlock::init(Rng& rng) {
  branch.init(rng);
  attention.init(rng);
}

void CsaBlock::collect(ParamCollector& out, const std::string& prefix) {
  branch.collect(out, prefix + ".branch");
  attention.collect(out, prefix + ".attention");
  post_bn.collect(out, prefix + ".post_bn");
}

// ---------------------------------------------------------------------------

FeatureExtractor::FeatureExtractor(const ModelConfig& config) {
  if (config.num_blocks < 1 || config.num_blocks > 4) {
    throw Error(ErrorKind::Config, "feature extractor needs 1..4 blocks, got " + std::to_string(config.num_blocks));
  }
  const std::size_t c = config.channels;
  blocks_.push_back(std::make_unique<CnnBlock>(1, c));
  for (std::size_t i = 1; i < config.num_blocks; ++i) {
    switch (config.block_type) {
      case BlockType::PlainCNN: blocks_.push_back(std::make_unique<CnnBlock>(c, c)); break;
      case BlockType::ResCNN: blocks_.push_back(std::make_unique<ResBlock>(c, config.bottleneck_ratio)); break;
      case BlockType::CSA:
        blocks_.push_back(std::make_unique<CsaBlock>(c, config.bottleneck_ratio, config.attention));
        break;
    }
  }
}

FeatureExtractor::Output FeatureExtractor::forward(const Tensor& x, bool training) {
  Output out;
  Tensor h = x;
  for (auto& b : blocks_) {
    out.blocks.push_back(b->forward(h, training));
    h = out.blocks.back().features;
  }
  out.features = h;
  return out;
}

void FeatureExtractor::init(Rng& rng) {
  for (auto& b : blocks_) b->init(rng);
}

void FeatureExtractor::collect(ParamCollector& out, const std::string& prefix) {
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i]->collect(out, prefix + "." + std::to_string(i));
}

void FeatureExtractor::set_alpha_override(AlphaOverride mode) {
  for (auto& b : blocks_) {
    if (auto* csa = dynamic_cast<CsaBlock*>(b.get())) csa->alpha_override = mode;
  }
}

}  // namespace csa
