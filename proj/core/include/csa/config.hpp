// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

namespace csa {

enum class BlockType { PlainCNN, ResCNN, CSA };

enum class AttentionKind { CC_SAM_3D, CW_SAM_2_5D, CW_SAM_2_5D_SHARED, SAM_2D, TAM_1D };

enum class Sampling { None, ConvDownUp, AvgPoolDownUp, MaxPoolDownUp };

enum class LabelMode { OneHot, MultiHot };

struct AttentionVariant {
  AttentionKind kind = AttentionKind::CC_SAM_3D;
  Sampling sampling = Sampling::MaxPoolDownUp;
  std::size_t context_kernel = 3;  // 1 or 3

  bool operator==(const AttentionVariant&) const = default;
};

/// Architecture plus training recipe. Defaults are the full-size settings:
/// 256-channel 3x3 blocks, bottleneck ratio 4, 128-unit BGRU, Adam at 1e-3,
/// batches of 32, lambda1 = 1e-4, lambda2 = 0.1.
struct ModelConfig {
  BlockType block_type = BlockType::CSA;
  std::size_t num_blocks = 3;
  AttentionVariant attention;
  std::size_t channels = 256;
  std::size_t bottleneck_ratio = 4;
  std::size_t gru_hidden = 128;
  std::size_t bgru_layers = 1;
  std::size_t num_classes = 10;
  LabelMode label_mode = LabelMode::OneHot;

  double lambda1 = 1e-4;
  double lambda2 = 0.1;
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 200;
  std::uint64_t seed = 1;

  bool standardize_input = true;
  double tag_threshold = 0.5;
  bool allow_resample = false;
  /// 0 selects automatically: the highest fold is the test fold and the next
  /// fold (cyclically) validates.
  std::size_t test_fold = 0;
  std::size_t valid_fold = 0;

  bool operator==(const ModelConfig&) const = default;
};

/// Throws a configuration error describing the first invalid field.
void validate(const ModelConfig& config);

/// Plain-text `key=value` lines; doubles are written with 17 significant
/// digits so parse(serialize(c)) == c.
std::string serialize(const ModelConfig& config);
ModelConfig parse_config(const std::string& text);
ModelConfig load_config(const std::string& path);

/// Applies one `key=value` assignment; unknown keys are a configuration error.
void set_config_value(ModelConfig& config, const std::string& key, const std::string& value);

std::string to_string(BlockType v);
std::string to_string(AttentionKind v);
std::string to_string(Sampling v);
std::string to_string(LabelMode v);
BlockType parse_block_type(const std::string& s);
AttentionKind parse_attention_kind(const std::string& s);
Sampling parse_sampling(const std::string& s);
LabelMode parse_label_mode(const std::string& s);

}  // namespace csa
