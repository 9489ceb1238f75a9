// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "csa/config.hpp"
#include "csa/dataset.hpp"
#include "csa/metrics.hpp"
#include "csa/model.hpp"

namespace csa {

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;      // mean total objective over batches
  double train_ce = 0.0;        // mean cross-entropy over batches
  double train_accuracy = 0.0;  // eval-mode pass over the training split (tagging: micro F1)
  std::optional<double> valid_loss;
  std::optional<double> valid_accuracy;
  std::string batch_hash;  // digest of this epoch's batch order
};

struct TrainOptions {
  std::string out_dir;  // empty: no files written
  std::ostream* log = nullptr;
  /// Stop once the training-split score reaches this value.
  std::optional<double> stop_train_accuracy;
  /// Overrides config.max_epochs when nonzero.
  std::size_t max_epochs = 0;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_score = -1.0;
  double first_batch_ce = 0.0;  // before any update
  std::string best_checkpoint;
  std::string last_checkpoint;
  FoldSplit split;
};

/// Seeded mini-batch training with per-epoch JSON-line records written to
/// `options.log` and `<out_dir>/train_log.jsonl`. The best-validation (or,
/// without a validation split, best-training) checkpoint is kept as
/// `<out_dir>/best.ckpt`, the latest epoch as `<out_dir>/last.ckpt`. A
/// non-finite loss or gradient aborts with a numeric error; checkpoints from
/// earlier epochs are left in place.
TrainResult train(Model& model, const std::vector<Clip>& clips, const std::vector<std::string>& classes,
                  const TrainOptions& options = {});

struct Evaluation {
  std::vector<std::vector<double>> scores;  // aggregated probabilities per clip
  MetricsReport report;
};

/// Eval-mode forward over `indices` (all clips when empty), in batches fanned
/// out across hardware threads.
Evaluation evaluate(Model& model, const std::vector<Clip>& clips, const std::vector<std::size_t>& indices = {});

/// Mean |G_ij|, i != j, of the Gram matrices of flattened attention maps, over
/// every clip and every CSA block with at least two maps.
double mean_gram_offdiagonal(Model& model, const std::vector<Clip>& clips, const std::vector<std::size_t>& indices = {});

/// FNV-1a digest of a clip-index sequence, as 16 hex digits.
std::string sequence_hash(const std::vector<std::size_t>& indices);

/// Score used for model selection: accuracy, or micro F1 when tagging.
double selection_score(const MetricsReport& report);

}  // namespace csa
