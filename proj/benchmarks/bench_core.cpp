// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "csa/audio.hpp"
#include "csa/layers.hpp"
#include "csa/model.hpp"
#include "csa/objective.hpp"

namespace {

csa::Tensor noise(const csa::Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  std::vector<double> v(csa::shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return csa::Tensor::from(shape, v);
}

void BM_Conv2d3x3(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  auto x = noise({1, c, 30, 62}, 1);
  auto w = noise({c, c, 3, 3}, 2);
  auto b = csa::Tensor::zeros({c});
  csa::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(csa::conv2d(x, w, b, {{1, 1}, {1, 1}, 1}).data().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(c * c * 9 * 30 * 62));
}
BENCHMARK(BM_Conv2d3x3)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_LogMsp(benchmark::State& state) {
  csa::Waveform w;
  w.sample_rate = csa::kSampleRate;
  w.samples.resize(static_cast<std::size_t>(state.range(0)) * csa::kSampleRate);
  for (std::size_t i = 0; i < w.samples.size(); ++i) w.samples[i] = 0.5 * std::sin(0.39 * static_cast<double>(i));
  for (auto _ : state) benchmark::DoNotOptimize(csa::log_msp(w).values.data());
}
BENCHMARK(BM_LogMsp)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_ForwardFull(benchmark::State& state) {
  csa::ModelConfig cfg;
  cfg.channels = static_cast<std::size_t>(state.range(0));
  cfg.gru_hidden = 16;
  csa::Model model(cfg);
  model.init(1);
  auto x = noise({1, 1, 60, 249}, 3);
  csa::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(csa::forward_full(model, x).prediction.aggregated.data().data());
}
BENCHMARK(BM_ForwardFull)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  csa::ModelConfig cfg;
  cfg.channels = 16;
  cfg.gru_hidden = 16;
  cfg.num_classes = 4;
  csa::Model model(cfg);
  model.init(1);
  auto pc = model.parameters();
  csa::Adam adam(pc.params(), {});
  auto x = noise({8, 1, 60, 124}, 4);
  std::vector<double> y(32, 0.0);
  for (std::size_t n = 0; n < 8; ++n) y[n * 4 + n % 4] = 1.0;
  auto targets = csa::Tensor::from({8, 4}, y);
  for (auto _ : state) {
    adam.zero_grad();
    auto r = model.forward(x, true);
    auto loss = csa::total_loss(csa::cross_entropy(r.prediction.aggregated, targets, csa::LabelMode::OneHot),
                                csa::l2_reg(pc.params()), csa::ortho_reg_maps(r.attention_maps), {cfg.lambda1, cfg.lambda2});
    loss.backward();
    adam.step();
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
