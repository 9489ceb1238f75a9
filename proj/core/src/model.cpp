// SPDX-License-Identifier: Apache-2.0
#include "csa/model.hpp"

#include "csa/error.hpp"
#include "csa/ops.hpp"

namespace csa {

Tensor freq_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw Error(ErrorKind::Shape, "freq_avg_pool expects [N,C,F,T], got " + shape_to_string(x.shape()));
  return reshape(reduce(x, {2}, ReduceMode::Mean), {x.dim(0), x.dim(1), x.dim(3)});
}

Tensor aggregate(const Tensor& per_step, const std::vector<std::size_t>& lengths) {
  if (per_step.rank() != 3) throw Error(ErrorKind::Shape, "aggregate expects [N, c, T]");
  const std::size_t n = per_step.dim(0), c = per_step.dim(1), t = per_step.dim(2);
  bool full = true;
  if (!lengths.empty()) {
    if (lengths.size() != n) throw Error(ErrorKind::Shape, "aggregate: one length per clip required");
    for (auto l : lengths) {
      if (l == 0 || l > t) throw Error(ErrorKind::Geometry, "aggregate: valid step count out of range");
      full = full && l == t;
    }
  }
  if (full) return reshape(reduce(per_step, {2}, ReduceMode::Mean), {n, c});
  std::vector<double> w(n * t, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t s = 0; s < lengths[b]; ++s) w[b * t + s] = 1.0 / static_cast<double>(lengths[b]);
  }
  const Tensor weights = Tensor::from({n, 1, t}, std::move(w));
  return reshape(reduce(mul(per_step, weights), {2}, ReduceMode::Sum), {n, c});
}

// ---------------------------------------------------------------------------

Head::Head(std::size_t input_size, std::size_t gru_hidden, std::size_t layers, std::size_t num_classes, OutputMode m)
    : classifier(2 * gru_hidden, num_classes), mode(m) {
  std::size_t in = input_size;
  for (std::size_t l = 0; l < layers; ++l) {
    bgru.emplace_back(GruParams::create(in, gru_hidden), GruParams::create(in, gru_hidden));
    in = 2 * gru_hidden;
  }
}

ClipPrediction Head::forward(const Tensor& z, const std::vector<std::size_t>& lengths) const {
  Tensor h = z;
  for (const auto& [fwd, bwd] : bgru) h = bgru_layer(h, fwd, bwd, lengths);
  const std::size_t n = h.dim(0), d = h.dim(1), t = h.dim(2);
  const Tensor rows = reshape(permute(h, {0, 2, 1}), {n * t, d});
  const Tensor logits = classifier(rows);
  const Tensor probs = mode == OutputMode::SoftmaxSingleLabel ? softmax(logits, 1) : sigmoid(logits);
  const std::size_t c = classifier.weight.dim(0);
  ClipPrediction out;
  out.per_step = permute(reshape(probs, {n, t, c}), {0, 2, 1});
  out.aggregated = aggregate(out.per_step, lengths);
  return out;
}

void Head::init(Rng& rng) {
  for (auto& [fwd, bwd] : bgru) {
    fwd.init(rng);
    bwd.init(rng);
  }
  classifier.init(rng);
}

void Head::collect(ParamCollector& out, const std::string& prefix) const {
  for (std::size_t l = 0; l < bgru.size(); ++l) {
    bgru[l].first.collect(out, prefix + ".bgru" + std::to_string(l) + ".forward");
    bgru[l].second.collect(out, prefix + ".bgru" + std::to_string(l) + ".backward");
  }
  classifier.collect(out, prefix + ".classifier");
}

// ---------------------------------------------------------------------------

Model::Model(const ModelConfig& config)
    : config_((validate(config), config)),
      features_(config),
      head_(config.channels, config.gru_hidden, config.bgru_layers, config.num_classes,
            config.label_mode == LabelMode::OneHot ? OutputMode::SoftmaxSingleLabel : OutputMode::SigmoidMultiLabel) {}

void Model::init(std::uint64_t seed) {
  Rng rng(seed);
  features_.init(rng);
  head_.init(rng);
}

std::size_t Model::min_extent() const { return std::size_t{1} << config_.num_blocks; }

ForwardResult Model::forward(const Tensor& x, bool training, const std::vector<std::size_t>& frame_lengths) {
  if (x.rank() != 4 || x.dim(1) != 1) {
    throw Error(ErrorKind::Shape, "model input must be [N, 1, F, T], got " + shape_to_string(x.shape()));
  }
  const std::size_t need = min_extent();
  if (x.dim(2) < need || x.dim(3) < need) {
    throw Error(ErrorKind::Geometry, "input " + shape_to_string(x.shape()) + " too small: " + std::to_string(config_.num_blocks) +
                                         " blocks need at least " + std::to_string(need) + " frames and mel bands");
  }
  ForwardResult result;
  auto feats = features_.forward(x, training);
  result.features = feats.features;
  for (auto& b : feats.blocks) {
    if (b.attention.defined()) result.attention_maps.push_back(b.attention);
  }
  const std::size_t steps = result.features.dim(3);
  if (!frame_lengths.empty()) {
    if (frame_lengths.size() != x.dim(0)) throw Error(ErrorKind::Shape, "one frame length per clip required");
    for (auto l : frame_lengths) {
      if (l < need) {
        throw Error(ErrorKind::Geometry, "clip with " + std::to_string(l) + " valid frames; at least " + std::to_string(need) +
                                             " required");
      }
      result.step_lengths.push_back(std::min(steps, l >> config_.num_blocks));
    }
  }
  result.prediction = head_.forward(freq_avg_pool(result.features), result.step_lengths);
  return result;
}

ParamCollector Model::parameters() {
  ParamCollector out;
  features_.collect(out, "blocks");
  head_.collect(out, "head");
  return out;
}

ForwardResult forward_full(Model& model, const Tensor& clip_msp) {
  if (clip_msp.rank() == 2) {
    return model.forward(reshape(clip_msp, {1, 1, clip_msp.dim(0), clip_msp.dim(1)}), false);
  }
  return model.forward(clip_msp, false);
}

}  // namespace csa
