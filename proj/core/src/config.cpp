// SPDX-License-Identifier: Apache-2.0
#include "csa/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "csa/error.hpp"

namespace csa {

namespace {

std::string normalize(std::string s) {
  std::string out;
  for (char c : s) {
    if (c == '-' || c == '.') c = '_';
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw Error(ErrorKind::Config, "invalid integer for " + key + ": '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw Error(ErrorKind::Config, "invalid integer for " + key + ": '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw Error(ErrorKind::Config, "invalid number for " + key + ": '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  const auto n = normalize(v);
  if (n == "true" || n == "1" || n == "yes" || n == "on") return true;
  if (n == "false" || n == "0" || n == "no" || n == "off") return false;
  throw Error(ErrorKind::Config, "invalid boolean for " + key + ": '" + v + "'");
}

}  // namespace

std::string to_string(BlockType v) {
  switch (v) {
    case BlockType::PlainCNN: return "plain_cnn";
    case BlockType::ResCNN: return "res_cnn";
    case BlockType::CSA: return "csa";
  }
  return "?";
}

std::string to_string(AttentionKind v) {
  switch (v) {
    case AttentionKind::CC_SAM_3D: return "cc_sam_3d";
    case AttentionKind::CW_SAM_2_5D: return "cw_sam_2_5d";
    case AttentionKind::CW_SAM_2_5D_SHARED: return "cw_sam_2_5d_shared";
    case AttentionKind::SAM_2D: return "sam_2d";
    case AttentionKind::TAM_1D: return "tam_1d";
  }
  return "?";
}

std::string to_string(Sampling v) {
  switch (v) {
    case Sampling::None: return "none";
    case Sampling::ConvDownUp: return "conv_down_up";
    case Sampling::AvgPoolDownUp: return "avgpool_down_up";
    case Sampling::MaxPoolDownUp: return "maxpool_down_up";
  }
  return "?";
}

std::string to_string(LabelMode v) { return v == LabelMode::OneHot ? "one_hot" : "multi_hot"; }

BlockType parse_block_type(const std::string& s) {
  const auto n = normalize(s);
  if (n == "plain_cnn" || n == "plaincnn" || n == "cnn" || n == "dcrnn") return BlockType::PlainCNN;
  if (n == "res_cnn" || n == "rescnn" || n == "res") return BlockType::ResCNN;
  if (n == "csa") return BlockType::CSA;
  throw Error(ErrorKind::Config, "unknown block type '" + s + "'");
}

AttentionKind parse_attention_kind(const std::string& s) {
  const auto n = normalize(s);
  if (n == "cc_sam_3d") return AttentionKind::CC_SAM_3D;
  if (n == "cw_sam_2_5d") return AttentionKind::CW_SAM_2_5D;
  if (n == "cw_sam_2_5d_shared") return AttentionKind::CW_SAM_2_5D_SHARED;
  if (n == "sam_2d") return AttentionKind::SAM_2D;
  if (n == "tam_1d") return AttentionKind::TAM_1D;
  throw Error(ErrorKind::Config, "unknown attention variant '" + s + "'");
}

Sampling parse_sampling(const std::string& s) {
  const auto n = normalize(s);
  if (n == "none") return Sampling::None;
  if (n == "conv_down_up" || n == "cnn_down_up" || n == "conv") return Sampling::ConvDownUp;
  if (n == "avgpool_down_up" || n == "ap_down_up" || n == "avg") return Sampling::AvgPoolDownUp;
  if (n == "maxpool_down_up" || n == "mp_down_up" || n == "max") return Sampling::MaxPoolDownUp;
  throw Error(ErrorKind::Config, "unknown sampling mode '" + s + "'");
}

LabelMode parse_label_mode(const std::string& s) {
  const auto n = normalize(s);
  if (n == "one_hot" || n == "onehot" || n == "single") return LabelMode::OneHot;
  if (n == "multi_hot" || n == "multihot" || n == "multi") return LabelMode::MultiHot;
  throw Error(ErrorKind::Config, "unknown label mode '" + s + "'");
}

void validate(const ModelConfig& c) {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::Config, m); };
  if (c.num_blocks < 1 || c.num_blocks > 4) fail("num_blocks must be in 1..4, got " + std::to_string(c.num_blocks));
  if (c.attention.context_kernel != 1 && c.attention.context_kernel != 3) fail("context_kernel must be 1 or 3");
  if (c.channels == 0) fail("channels must be positive");
  if (c.bottleneck_ratio == 0 || c.channels % c.bottleneck_ratio != 0) {
    fail("channels must be divisible by bottleneck_ratio");
  }
  if (c.gru_hidden == 0) fail("gru_hidden must be positive");
  if (c.bgru_layers != 1 && c.bgru_layers != 2) fail("bgru_layers must be 1 or 2");
  if (c.num_classes < 2) fail("num_classes must be at least 2");
  if (c.lambda1 < 0 || c.lambda2 < 0) fail("regularization weights must be non-negative");
  if (!(c.lr > 0)) fail("lr must be positive");
  if (!(c.adam_beta1 > 0 && c.adam_beta1 < 1 && c.adam_beta2 > 0 && c.adam_beta2 < 1)) fail("Adam betas must lie in (0,1)");
  if (!(c.adam_eps > 0)) fail("adam_eps must be positive");
  if (c.batch_size == 0) fail("batch_size must be positive");
  if (c.max_epochs == 0) fail("max_epochs must be positive");
  if (!(c.tag_threshold > 0 && c.tag_threshold < 1)) fail("tag_threshold must lie in (0,1)");
}

std::string serialize(const ModelConfig& c) {
  std::ostringstream os;
  os << "block_type=" << to_string(c.block_type) << '\n'
     << "num_blocks=" << c.num_blocks << '\n'
     << "attention_variant=" << to_string(c.attention.kind) << '\n'
     << "attention_sampling=" << to_string(c.attention.sampling) << '\n'
     << "context_kernel=" << c.attention.context_kernel << '\n'
     << "channels=" << c.channels << '\n'
     << "bottleneck_ratio=" << c.bottleneck_ratio << '\n'
     << "gru_hidden=" << c.gru_hidden << '\n'
     << "bgru_layers=" << c.bgru_layers << '\n'
     << "num_classes=" << c.num_classes << '\n'
     << "label_mode=" << to_string(c.label_mode) << '\n'
     << "lambda1=" << format_double(c.lambda1) << '\n'
     << "lambda2=" << format_double(c.lambda2) << '\n'
     << "lr=" << format_double(c.lr) << '\n'
     << "adam_beta1=" << format_double(c.adam_beta1) << '\n'
     << "adam_beta2=" << format_double(c.adam_beta2) << '\n'
     << "adam_eps=" << format_double(c.adam_eps) << '\n'
     << "batch_size=" << c.batch_size << '\n'
     << "max_epochs=" << c.max_epochs << '\n'
     << "seed=" << c.seed << '\n'
     << "standardize_input=" << (c.standardize_input ? "true" : "false") << '\n'
     << "tag_threshold=" << format_double(c.tag_threshold) << '\n'
     << "allow_resample=" << (c.allow_resample ? "true" : "false") << '\n'
     << "test_fold=" << c.test_fold << '\n'
     << "valid_fold=" << c.valid_fold << '\n';
  return os.str();
}

void set_config_value(ModelConfig& c, const std::string& raw_key, const std::string& raw_value) {
  const std::string key = normalize(trim(raw_key));
  const std::string v = trim(raw_value);
  if (key == "block_type") c.block_type = parse_block_type(v);
  else if (key == "num_blocks" || key == "blocks") c.num_blocks = to_size(key, v);
  else if (key == "attention_variant" || key == "variant") c.attention.kind = parse_attention_kind(v);
  else if (key == "attention_sampling" || key == "sampling") c.attention.sampling = parse_sampling(v);
  else if (key == "context_kernel") c.attention.context_kernel = to_size(key, v);
  else if (key == "channels") c.channels = to_size(key, v);
  else if (key == "bottleneck_ratio") c.bottleneck_ratio = to_size(key, v);
  else if (key == "gru_hidden") c.gru_hidden = to_size(key, v);
  else if (key == "bgru_layers") c.bgru_layers = to_size(key, v);
  else if (key == "num_classes") c.num_classes = to_size(key, v);
  else if (key == "label_mode") c.label_mode = parse_label_mode(v);
  else if (key == "lambda1") c.lambda1 = to_double(key, v);
  else if (key == "lambda2") c.lambda2 = to_double(key, v);
  else if (key == "lr") c.lr = to_double(key, v);
  else if (key == "adam_beta1") c.adam_beta1 = to_double(key, v);
  else if (key == "adam_beta2") c.adam_beta2 = to_double(key, v);
  else if (key == "adam_eps") c.adam_eps = to_double(key, v);
  else if (key == "batch_size") c.batch_size = to_size(key, v);
  else if (key == "max_epochs") c.max_epochs = to_size(key, v);
  else if (key == "seed") c.seed = to_u64(key, v);
  else if (key == "standardize_input") c.standardize_input = to_bool(key, v);
  else if (key == "tag_threshold") c.tag_threshold = to_double(key, v);
  else if (key == "allow_resample") c.allow_resample = to_bool(key, v);
  else if (key == "test_fold") c.test_fold = to_size(key, v);
  else if (key == "valid_fold") c.valid_fold = to_size(key, v);
  else throw Error(ErrorKind::Config, "unknown configuration key '" + raw_key + "'");
}

ModelConfig parse_config(const std::string& text) {
  ModelConfig c;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::Config, "line " + std::to_string(line_no) + ": expected key=value, got '" + line + "'");
    }
    set_config_value(c, line.substr(0, eq), line.substr(eq + 1));
  }
  validate(c);
  return c;
}

ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Config, "cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace csa
