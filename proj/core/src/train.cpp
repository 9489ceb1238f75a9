// SPDX-License-Identifier: Apache-2.0
#include "csa/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "csa/checkpoint.hpp"
#include "csa/error.hpp"
#include "csa/objective.hpp"
#include "csa/ops.hpp"
#include "json.hpp"

namespace csa {

namespace fs = std::filesystem;

std::string sequence_hash(const std::vector<std::size_t>& indices) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto v : indices) {
    for (int b = 0; b < 8; ++b) {
      h ^= (static_cast<std::uint64_t>(v) >> (8 * b)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

double selection_score(const MetricsReport& report) {
  if (report.accuracy) return *report.accuracy;
  return report.micro ? report.micro->f1 : 0.0;
}

namespace {

std::vector<std::size_t> all_indices(const std::vector<Clip>& clips, const std::vector<std::size_t>& indices) {
  if (!indices.empty()) return indices;
  std::vector<std::size_t> out(clips.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
  return out;
}

std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& order, std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < order.size(); s += size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), s + size)));
  }
  return out;
}

/// Runs `fn(batch_index)` for every batch, spread over hardware threads.
template <typename Fn>
void parallel_batches(std::size_t count, Fn fn) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    NoGradGuard guard;
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, std::max<std::size_t>(count, 1));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

double clip_loss(const std::vector<double>& p, const std::vector<std::size_t>& labels, LabelMode mode) {
  if (mode == LabelMode::OneHot) return -std::log(std::max(p.at(labels.at(0)), kLogFloor));
  double loss = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const bool y = std::find(labels.begin(), labels.end(), k) != labels.end();
    loss -= y ? std::log(std::max(p[k], kLogFloor)) : std::log(std::max(1.0 - p[k], kLogFloor));
  }
  return loss / static_cast<double>(p.size());
}

double mean_loss(const Evaluation& e, const std::vector<Clip>& clips, const std::vector<std::size_t>& indices, LabelMode mode) {
  double total = 0.0;
  for (std::size_t k = 0; k < indices.size(); ++k) total += clip_loss(e.scores[k], clips[indices[k]].labels, mode);
  return indices.empty() ? 0.0 : total / static_cast<double>(indices.size());
}

[[noreturn]] void diverged(std::ostream* log, std::ofstream& file, std::size_t epoch, std::size_t batch, const std::string& why) {
  nlohmann::ordered_json j{{"epoch", epoch}, {"event", "diverged"}, {"batch", batch}, {"reason", why}};
  const std::string line = j.dump();
  if (log) *log << line << std::endl;
  if (file) file << line << std::endl;
  throw Error(ErrorKind::Numeric, "training diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                                      ": " + why);
}

}  // namespace

Evaluation evaluate(Model& model, const std::vector<Clip>& clips, const std::vector<std::size_t>& requested) {
  const auto& cfg = model.config();
  const auto indices = all_indices(clips, requested);
  const auto batches = chunk(indices, std::max<std::size_t>(cfg.batch_size, 1));
  Evaluation out;
  out.scores.resize(indices.size());
  std::vector<std::size_t> offsets(batches.size(), 0);
  for (std::size_t b = 1; b < batches.size(); ++b) offsets[b] = offsets[b - 1] + batches[b - 1].size();
  parallel_batches(batches.size(), [&](std::size_t b) {
    const Batch batch = make_batch(clips, batches[b], cfg.num_classes);
    const auto r = model.forward(batch.inputs, false, batch.frame_lengths);
    const auto agg = r.prediction.aggregated.data();
    for (std::size_t k = 0; k < batches[b].size(); ++k) {
      out.scores[offsets[b] + k].assign(agg.begin() + static_cast<std::ptrdiff_t>(k * cfg.num_classes),
                                        agg.begin() + static_cast<std::ptrdiff_t>((k + 1) * cfg.num_classes));
    }
  });
  std::vector<std::vector<std::size_t>> labels;
  std::vector<std::size_t> folds;
  for (auto i : indices) {
    labels.push_back(clips[i].labels);
    folds.push_back(clips[i].fold);
  }
  out.report = build_report(out.scores, labels, folds, cfg.num_classes, cfg.label_mode, cfg.tag_threshold);
  return out;
}

double mean_gram_offdiagonal(Model& model, const std::vector<Clip>& clips, const std::vector<std::size_t>& requested) {
  const auto indices = all_indices(clips, requested);
  const auto batches = chunk(indices, std::max<std::size_t>(model.config().batch_size, 1));
  std::vector<double> sums(batches.size(), 0.0);
  std::vector<std::size_t> counts(batches.size(), 0);
  parallel_batches(batches.size(), [&](std::size_t b) {
    const Batch batch = make_batch(clips, batches[b], model.config().num_classes);
    const auto r = model.forward(batch.inputs, false, batch.frame_lengths);
    for (const auto& a : r.attention_maps) {
      const std::size_t k = a.dim(1);
      if (k < 2) continue;
      for (std::size_t n = 0; n < a.dim(0); ++n) {
        const Tensor m = flatten_attention(a, n);
        const auto g = matmul(transpose(m), m).data();
        double s = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            if (i != j) s += std::abs(g[i * k + j]);
          }
        }
        sums[b] += s / static_cast<double>(k * (k - 1));
        ++counts[b];
      }
    }
  });
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    total += sums[b];
    count += counts[b];
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

TrainResult train(Model& model, const std::vector<Clip>& clips, const std::vector<std::string>& classes,
                  const TrainOptions& options) {
  const ModelConfig cfg = model.config();
  validate(cfg);
  if (classes.size() != cfg.num_classes) {
    throw Error(ErrorKind::Config, "dataset has " + std::to_string(classes.size()) + " classes, config expects " +
                                       std::to_string(cfg.num_classes));
  }
  TrainResult result;
  result.split = split_by_fold(clips, cfg.test_fold, cfg.valid_fold);
  if (result.split.train.empty()) throw Error(ErrorKind::Data, "training split is empty");

  std::ofstream file;
  if (!options.out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(options.out_dir, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create " + options.out_dir + ": " + ec.message());
    file.open(fs::path(options.out_dir) / "train_log.jsonl", std::ios::trunc);
    if (!file) throw Error(ErrorKind::Io, "cannot write the training log in " + options.out_dir);
    result.best_checkpoint = (fs::path(options.out_dir) / "best.ckpt").string();
    result.last_checkpoint = (fs::path(options.out_dir) / "last.ckpt").string();
  }
  auto emit = [&](const nlohmann::ordered_json& j) {
    const std::string line = j.dump();
    if (options.log) *options.log << line << std::endl;
    if (file) file << line << std::endl;
  };

  std::seed_seq shuffle_seed{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 0x5348u};
  std::mt19937_64 shuffle_rng(shuffle_seed);

  auto collected = model.parameters();
  Adam adam(collected.params(), AdamOptions{cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});
  const ObjectiveConfig objective{cfg.lambda1, cfg.lambda2, cfg.label_mode};
  const std::size_t epochs = options.max_epochs ? options.max_epochs : cfg.max_epochs;

  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    std::vector<std::size_t> order = result.split.train;
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const auto batches = chunk(order, cfg.batch_size);
    double loss_sum = 0.0, ce_sum = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Batch batch = make_batch(clips, batches[b], cfg.num_classes);
      const auto fwd = model.forward(batch.inputs, true, batch.frame_lengths);
      const Tensor ce = cross_entropy(fwd.prediction.aggregated, batch.targets, cfg.label_mode);
      const Tensor l2 = l2_reg(collected.params());
      const Tensor ortho = cfg.lambda2 > 0.0 ? ortho_reg_maps(fwd.attention_maps) : Tensor::scalar(0.0);
      const Tensor total = total_loss(ce, l2, ortho, objective);
      if (epoch == 1 && b == 0) result.first_batch_ce = ce.item();
      const double value = total.item();
      if (!std::isfinite(value)) diverged(options.log, file, epoch, b, "non-finite loss");
      adam.zero_grad();
      total.backward();
      try {
        adam.step();
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Numeric) throw;
        diverged(options.log, file, epoch, b, e.what());
      }
      loss_sum += value;
      ce_sum += ce.item();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches.size());
    rec.train_ce = ce_sum / static_cast<double>(batches.size());
    rec.batch_hash = sequence_hash(order);
    const auto train_eval = evaluate(model, clips, result.split.train);
    rec.train_accuracy = selection_score(train_eval.report);
    emit({{"epoch", epoch},
          {"split", "train"},
          {"loss", rec.train_loss},
          {"ce", rec.train_ce},
          {"accuracy", rec.train_accuracy},
          {"batch_hash", rec.batch_hash}});
    double score = rec.train_accuracy;
    if (!result.split.valid.empty()) {
      const auto valid_eval = evaluate(model, clips, result.split.valid);
      rec.valid_accuracy = selection_score(valid_eval.report);
      rec.valid_loss = mean_loss(valid_eval, clips, result.split.valid, cfg.label_mode);
      score = *rec.valid_accuracy;
      emit({{"epoch", epoch}, {"split", "valid"}, {"loss", *rec.valid_loss}, {"accuracy", *rec.valid_accuracy}});
    }
    result.epochs.push_back(rec);

    if (!options.out_dir.empty()) {
      std::ostringstream rng_state;
      rng_state << shuffle_rng;
      std::map<std::string, std::string> meta{{"epoch", std::to_string(epoch)}, {"shuffle_rng", rng_state.str()}};
      const auto ckpt = capture_checkpoint(model, classes, &adam, meta);
      save_checkpoint(result.last_checkpoint, ckpt);
      if (score > result.best_score) save_checkpoint(result.best_checkpoint, ckpt);
    }
    if (score > result.best_score) {
      result.best_score = score;
      result.best_epoch = epoch;
    }
    if (options.stop_train_accuracy && rec.train_accuracy >= *options.stop_train_accuracy) break;
  }
  return result;
}

}  // namespace csa
