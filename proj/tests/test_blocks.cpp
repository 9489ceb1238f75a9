// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "csa/blocks.hpp"
#include "csa/error.hpp"
#include "csa/gradcheck.hpp"
#include "csa/ops.hpp"
#include "helpers.hpp"

using namespace csa;
using testing_support::copy_matching;
using testing_support::max_abs_diff;
using testing_support::random_tensor;
using testing_support::randomize_norms;
using testing_support::weighted_sum;
using testing_support::weighted_terms;

namespace {

std::vector<Tensor> trainable(const ParamCollector& pc) {
  std::vector<Tensor> out;
  for (const auto& p : pc.params()) out.push_back(p.tensor);
  return out;
}

const AttentionKind kAllKinds[] = {AttentionKind::CC_SAM_3D, AttentionKind::CW_SAM_2_5D,
                                   AttentionKind::CW_SAM_2_5D_SHARED, AttentionKind::SAM_2D, AttentionKind::TAM_1D};
const Sampling kAllSampling[] = {Sampling::None, Sampling::ConvDownUp, Sampling::AvgPoolDownUp, Sampling::MaxPoolDownUp};

}  // namespace

TEST(CnnBlock, FrontendShape) {
  CnnBlock block(1, 256);
  Rng rng(1);
  block.init(rng);
  auto out = block.forward(random_tensor({2, 1, 60, 249}, 1), true);
  EXPECT_EQ(out.features.shape(), (Shape{2, 256, 30, 124}));
}

TEST(CnnBlock, ZeroInZeroOut) {
  CnnBlock block(1, 8);
  Rng rng(2);
  block.init(rng);
  for (bool training : {true, false}) {
    auto out = block.forward(Tensor::zeros({2, 1, 6, 6}), training);
    for (double v : out.features.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(CnnBlock, TooSmall) {
  CnnBlock block(1, 4);
  EXPECT_THROW(block.forward(Tensor::zeros({1, 1, 1, 8}), false), Error);
  try {
    block.forward(Tensor::zeros({1, 1, 8, 1}), false);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Geometry);
  }
}

TEST(ResBlock, ZeroBranchIsPostProcessOnly) {
  const std::size_t c = 8;
  ResBlock block(c, 4);
  Rng rng(3);
  block.init(rng);
  for (auto& v : block.branch.expand.weight.mutable_data()) v = 0.0;
  auto x = random_tensor({2, c, 6, 8}, 3);
  auto out = block.forward(x, false);
  auto expected = pool2d(relu(block.post_bn(x, false)), PoolMode::Max);
  EXPECT_EQ(out.features.to_vector(), expected.to_vector());
}

TEST(ResBlock, PrePoolMinusInputIsBranch) {
  const std::size_t c = 8;
  ResBlock block(c, 4);
  Rng rng(4);
  block.init(rng);
  auto x = random_tensor({2, c, 6, 8}, 4);
  auto out = block.forward(x, true);
  auto diff = sub(out.pre_pool, x);
  EXPECT_LT(max_abs_diff(diff.data(), out.residual.data()), 1e-12);
}

TEST(ResBlock, FullWidthShape) {
  ResBlock block(256, 4);
  Rng rng(5);
  block.init(rng);
  EXPECT_EQ(block.forward(random_tensor({2, 256, 30, 124}, 5), false).features.shape(), (Shape{2, 256, 15, 62}));
}

TEST(ResBlock, ChannelMismatch) {
  ResBlock block(8, 4);
  try {
    block.forward(Tensor::zeros({1, 4, 4, 4}), false);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Shape);
  }
}

TEST(Attention, ZeroProjectionGivesHalf) {
  for (auto kind : kAllKinds)
    for (auto sampling : kAllSampling) {
      AttentionNet net(8, {kind, sampling, 3});
      Rng rng(6);
      net.init(rng);
      for (auto& v : net.project.weight.mutable_data()) v = 0.0;
      for (auto& v : net.project.bias.mutable_data()) v = 0.0;
      auto alpha = net(random_tensor({2, 8, 6, 8}, 6), true);
      for (double v : alpha.data()) ASSERT_EQ(v, 0.5) << to_string(kind) << " " << to_string(sampling);
    }
}

TEST(Attention, RangeAndShapes) {
  const std::size_t c = 6;
  for (auto kind : kAllKinds)
    for (auto sampling : kAllSampling) {
      AttentionNet net(c, {kind, sampling, 3});
      Rng rng(7);
      net.init(rng);
      ParamCollector pc;
      net.collect(pc, "a");
      randomize_norms(pc, 7);
      auto alpha = net(random_tensor({2, c, 7, 9}, 7, 3.0), false);
      const std::size_t maps = (kind == AttentionKind::SAM_2D || kind == AttentionKind::TAM_1D) ? 1 : c;
      const std::size_t f = kind == AttentionKind::TAM_1D ? 1 : 7;
      EXPECT_EQ(alpha.shape(), (Shape{2, maps, f, 9})) << to_string(kind);
      EXPECT_EQ(net.map_channels(), maps);
      for (double v : alpha.data()) {
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
      }
    }
}

TEST(Attention, TemporalMapConstantOverFrequency) {
  CsaBlock block(8, 4, {AttentionKind::TAM_1D, Sampling::None, 3});
  Rng rng(8);
  block.init(rng);
  auto x = random_tensor({1, 8, 6, 5}, 8);
  auto out = block.forward(x, true);
  ASSERT_EQ(out.attention.shape(), (Shape{1, 1, 1, 5}));
  // Broadcast against the residual: each time column of the gate is one value.
  auto gate = sub(out.pre_pool, x);
  for (std::size_t c = 0; c < 8; ++c)
    for (std::size_t f = 0; f < 6; ++f)
      for (std::size_t t = 0; t < 5; ++t)
        EXPECT_NEAR(gate.at({0, c, f, t}), out.attention.at({0, 0, 0, t}) * out.residual.at({0, c, f, t}), 1e-14);
}

TEST(Attention, SpatialMapSharedAcrossChannels) {
  CsaBlock block(8, 4, {AttentionKind::SAM_2D, Sampling::MaxPoolDownUp, 3});
  Rng rng(9);
  block.init(rng);
  auto x = random_tensor({1, 8, 6, 6}, 9);
  auto out = block.forward(x, true);
  ASSERT_EQ(out.attention.dim(1), 1u);
  auto gated = sub(out.pre_pool, x);
  for (std::size_t c = 0; c < 8; ++c)
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 6; ++j)
        EXPECT_NEAR(gated.at({0, c, i, j}), out.attention.at({0, 0, i, j}) * out.residual.at({0, c, i, j}), 1e-14);
}

TEST(Attention, UnknownContextKernel) {
  try {
    AttentionNet net(4, {AttentionKind::SAM_2D, Sampling::None, 5});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
}

TEST(CsaBlock, AlphaOneEqualsResidualBlock) {
  const std::size_t c = 8;
  for (auto kind : kAllKinds) {
    CsaBlock csa(c, 4, {kind, Sampling::MaxPoolDownUp, 3});
    ResBlock res(c, 4);
    Rng rng(10);
    csa.init(rng);
    ParamCollector pc_csa, pc_res;
    csa.collect(pc_csa, "b");
    res.collect(pc_res, "b");
    randomize_norms(pc_csa, 10);
    copy_matching(pc_csa, pc_res);
    csa.alpha_override = AlphaOverride::Ones;
    auto x = random_tensor({2, c, 6, 8}, 10);
    for (bool training : {true, false}) {
      auto a = csa.forward(x, training);
      auto b = res.forward(x, training);
      EXPECT_LT(max_abs_diff(a.features.data(), b.features.data()), 1e-9) << to_string(kind);
    }
  }
}

TEST(CsaBlock, AlphaZeroIsIdentity) {
  const std::size_t c = 8;
  CsaBlock block(c, 4, {AttentionKind::CC_SAM_3D, Sampling::MaxPoolDownUp, 3});
  Rng rng(11);
  block.init(rng);
  block.alpha_override = AlphaOverride::Zeros;
  auto x = random_tensor({2, c, 6, 8}, 11);
  EXPECT_EQ(block.forward(x, true).pre_pool.to_vector(), x.to_vector());
}

TEST(CsaBlock, PrePoolIdentityLiteral) {
  const std::size_t c = 8;
  for (auto kind : kAllKinds) {
    CsaBlock block(c, 4, {kind, Sampling::AvgPoolDownUp, 3});
    Rng rng(12);
    block.init(rng);
    auto x = random_tensor({2, c, 6, 8}, 12);
    auto out = block.forward(x, true);
    auto lhs = sub(out.pre_pool, x);
    auto rhs = mul(out.attention, out.residual);
    EXPECT_LT(max_abs_diff(lhs.data(), rhs.data()), 1e-12) << to_string(kind);
  }
}

TEST(CsaBlock, ScalarBlend) {
  // x + a * f with f = x^{s+1} - x equals (1 - a) x + a x^{s+1}.
  auto x = Tensor::scalar(2.0), f = Tensor::scalar(2.0), a = Tensor::scalar(0.5);
  EXPECT_DOUBLE_EQ(add(x, mul(a, f)).item(), 3.0);
  EXPECT_DOUBLE_EQ(add(mul(add_scalar(neg(a), 1.0), x), mul(a, add(x, f))).item(), 3.0);
}

TEST(CsaBlock, AttentionGradientIsLive) {
  const std::size_t c = 8;
  for (auto kind : kAllKinds) {
    CsaBlock block(c, 4, {kind, Sampling::MaxPoolDownUp, 3});
    Rng rng(13);
    block.init(rng);
    auto out = block.forward(random_tensor({2, c, 6, 8}, 13), true);
    weighted_sum(out.features, 13).backward();
    ParamCollector pc;
    block.attention.collect(pc, "a");
    double norm = 0.0;
    for (const auto& p : pc.params())
      if (p.tensor.has_grad())
        for (double g : p.tensor.grad()) norm += g * g;
    EXPECT_GT(norm, 0.0) << to_string(kind);
  }
}

TEST(FeatureExtractor, PlainShape) {
  ModelConfig cfg;
  cfg.block_type = BlockType::PlainCNN;
  FeatureExtractor fx(cfg);
  Rng rng(14);
  fx.init(rng);
  NoGradGuard guard;
  EXPECT_EQ(fx.forward(random_tensor({1, 1, 60, 249}, 14), false).features.shape(), (Shape{1, 256, 7, 31}));
}

TEST(FeatureExtractor, CsaStackWithUnitAlphaIsResStack) {
  ModelConfig cfg;
  cfg.channels = 8;
  cfg.block_type = BlockType::CSA;
  FeatureExtractor csa(cfg);
  cfg.block_type = BlockType::ResCNN;
  FeatureExtractor res(cfg);
  Rng rng(15);
  csa.init(rng);
  ParamCollector pc_csa, pc_res;
  csa.collect(pc_csa, "f");
  res.collect(pc_res, "f");
  randomize_norms(pc_csa, 15);
  EXPECT_EQ(copy_matching(pc_csa, pc_res), pc_res.params().size());
  csa.set_alpha_override(AlphaOverride::Ones);
  auto x = random_tensor({2, 1, 16, 24}, 15);
  for (bool training : {true, false}) {
    auto a = csa.forward(x, training).features;
    auto b = res.forward(x, training).features;
    EXPECT_LT(max_abs_diff(a.data(), b.data()), 1e-9);
  }
}

TEST(FeatureExtractor, BlockCountValidated) {
  ModelConfig cfg;
  for (std::size_t n : {0u, 5u}) {
    cfg.num_blocks = n;
    EXPECT_THROW(FeatureExtractor{cfg}, Error);
  }
}

class BlockGradients : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(BlockGradients, CnnBlockTrainMode) {
  const auto seed = GetParam();
  CnnBlock block(1, 4);
  Rng rng(seed);
  block.init(rng);
  ParamCollector pc;
  block.collect(pc, "b");
  auto x = random_tensor({2, 1, 8, 8}, seed, 1.0, true);
  auto params = trainable(pc);
  params.push_back(x);
  auto r = finite_difference_check([&] { return weighted_terms(block.forward(x, true).features, seed); }, params);
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST_P(BlockGradients, ResidualAndCsaBlocks) {
  const auto seed = GetParam();
  const std::size_t c = 8;
  std::vector<std::unique_ptr<Block>> blocks;
  blocks.push_back(std::make_unique<ResBlock>(c, 4));
  for (auto kind : kAllKinds) blocks.push_back(std::make_unique<CsaBlock>(c, 4, AttentionVariant{kind, Sampling::MaxPoolDownUp, 3}));
  blocks.push_back(std::make_unique<CsaBlock>(c, 4, AttentionVariant{AttentionKind::CC_SAM_3D, Sampling::ConvDownUp, 3}));
  blocks.push_back(std::make_unique<CsaBlock>(c, 4, AttentionVariant{AttentionKind::CC_SAM_3D, Sampling::AvgPoolDownUp, 1}));
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto& block = *blocks[i];
    Rng rng(seed + i);
    block.init(rng);
    ParamCollector pc;
    block.collect(pc, "b");
    randomize_norms(pc, seed + i);
    auto x = random_tensor({2, c, 8, 8}, seed + i, 1.0, true);
    auto params = trainable(pc);
    params.push_back(x);
    auto r = finite_difference_check([&] { return weighted_terms(block.forward(x, false).features, seed); }, params);
    EXPECT_LT(r.max_relative_error, 1e-4) << "block " << i << " param " << r.worst_param << " coord " << r.worst_coordinate << " analytic " << r.analytic << " numeric " << r.numeric;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, BlockGradients, ::testing::Values(1u, 2u, 3u));
