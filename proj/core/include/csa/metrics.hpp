// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csa/config.hpp"

namespace csa {

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

using ConfusionMatrix = std::vector<std::vector<std::size_t>>;  // rows = truth

ConfusionMatrix confusion_matrix(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& predicted,
                                 std::size_t num_classes);
double accuracy(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& predicted);
std::size_t correct_count(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& predicted);

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

/// Per-class precision/recall/F1 from a confusion matrix. Classes with an
/// empty denominator score 0.
std::vector<ClassScores> per_class_scores(const ConfusionMatrix& confusion);

struct Prf1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0;
  std::vector<std::string> warnings;  // zero denominators
};

using TagMatrix = std::vector<std::vector<std::uint8_t>>;  // [clips x classes], 0/1

/// Micro-averaged over every (clip, class) decision.
Prf1 prf1(const TagMatrix& predicted, const TagMatrix& truth);

struct CorrectedDegradedKept {
  double corrected = 0.0;
  double degraded = 0.0;
  double kept = 0.0;
  // Exact clip counts behind the fractions.
  std::size_t corrected_clips = 0;
  std::size_t degraded_clips = 0;
  std::size_t kept_clips = 0;
  std::size_t total = 0;
};

/// Fractions of clips whose correctness flips or persists going from M1 to M2.
/// Throws an alignment error on length mismatch.
CorrectedDegradedKept corrected_degraded_kept(const std::vector<std::size_t>& m1, const std::vector<std::size_t>& m2,
                                              const std::vector<std::size_t>& truth);

/// Mean and sample standard deviation (n - 1); the deviation is 0 for n < 2.
std::pair<double, double> mean_std(const std::vector<double>& values);

struct FoldScore {
  std::size_t fold = 0;
  std::size_t clips = 0;
  double score = 0.0;  // accuracy, or micro F1 when tagging
};

struct MetricsReport {
  LabelMode mode = LabelMode::OneHot;
  std::size_t clips = 0;
  std::optional<double> accuracy;
  ConfusionMatrix confusion;
  std::vector<ClassScores> per_class;
  std::optional<Prf1> micro;
  std::vector<FoldScore> folds;
  double fold_mean = 0.0;
  double fold_std = 0.0;
};

/// `scores` [clips x classes] aggregated probabilities. Single-label clips are
/// classified by argmax; tags use `threshold`. Per-fold scores and their
/// mean/std are filled when more than one fold is present.
MetricsReport build_report(const std::vector<std::vector<double>>& scores, const std::vector<std::vector<std::size_t>>& labels,
                           const std::vector<std::size_t>& folds, std::size_t num_classes, LabelMode mode,
                           double threshold = 0.5);

std::string report_to_json(const MetricsReport& report, const std::vector<std::string>& class_names);

}  // namespace csa
