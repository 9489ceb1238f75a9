// SPDX-License-Identifier: Apache-2.0
#include "csa/metrics.hpp"

#include <cmath>
#include <map>

#include "csa/error.hpp"
#include "json.hpp"

namespace csa {

namespace {

double safe_ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double harmonic(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

void require_aligned(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw Error(ErrorKind::Alignment, std::string(what) + ": " + std::to_string(a) + " predictions vs " + std::to_string(b) +
                                          " references");
  }
}

}  // namespace

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorKind::Shape, "argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

ConfusionMatrix confusion_matrix(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& predicted,
                                 std::size_t num_classes) {
  require_aligned(predicted.size(), truth.size(), "confusion_matrix");
  ConfusionMatrix m(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= num_classes || predicted[i] >= num_classes) {
      throw Error(ErrorKind::Index, "class index out of range in confusion_matrix");
    }
    ++m[truth[i]][predicted[i]];
  }
  return m;
}

std::size_t correct_count(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& predicted) {
  require_aligned(predicted.size(), truth.size(), "accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += truth[i] == predicted[i];
  return hits;
}

double accuracy(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& predicted) {
  return safe_ratio(correct_count(truth, predicted), truth.size());
}

std::vector<ClassScores> per_class_scores(const ConfusionMatrix& confusion) {
  const std::size_t c = confusion.size();
  std::vector<ClassScores> out(c);
  for (std::size_t k = 0; k < c; ++k) {
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < c; ++j) {
      row += confusion[k][j];
      col += confusion[j][k];
    }
    out[k].support = row;
    out[k].precision = safe_ratio(confusion[k][k], col);
    out[k].recall = safe_ratio(confusion[k][k], row);
    out[k].f1 = harmonic(out[k].precision, out[k].recall);
  }
  return out;
}

Prf1 prf1(const TagMatrix& predicted, const TagMatrix& truth) {
  require_aligned(predicted.size(), truth.size(), "prf1");
  Prf1 r;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require_aligned(predicted[i].size(), truth[i].size(), "prf1 row");
    for (std::size_t k = 0; k < truth[i].size(); ++k) {
      const bool p = predicted[i][k] != 0, t = truth[i][k] != 0;
      r.tp += p && t;
      r.fp += p && !t;
      r.fn += !p && t;
    }
  }
  if (r.tp + r.fp == 0) r.warnings.emplace_back("precision undefined (no positive predictions); reported as 0");
  if (r.tp + r.fn == 0) r.warnings.emplace_back("recall undefined (no positive references); reported as 0");
  r.precision = safe_ratio(r.tp, r.tp + r.fp);
  r.recall = safe_ratio(r.tp, r.tp + r.fn);
  r.f1 = harmonic(r.precision, r.recall);
  return r;
}

CorrectedDegradedKept corrected_degraded_kept(const std::vector<std::size_t>& m1, const std::vector<std::size_t>& m2,
                                              const std::vector<std::size_t>& truth) {
  require_aligned(m1.size(), truth.size(), "corrected_degraded_kept (M1)");
  require_aligned(m2.size(), truth.size(), "corrected_degraded_kept (M2)");
  CorrectedDegradedKept r;
  r.total = truth.size();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool ok1 = m1[i] == truth[i], ok2 = m2[i] == truth[i];
    r.corrected_clips += !ok1 && ok2;
    r.degraded_clips += ok1 && !ok2;
    r.kept_clips += ok1 && ok2;
  }
  r.corrected = safe_ratio(r.corrected_clips, r.total);
  r.degraded = safe_ratio(r.degraded_clips, r.total);
  r.kept = safe_ratio(r.kept_clips, r.total);
  return r;
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

MetricsReport build_report(const std::vector<std::vector<double>>& scores, const std::vector<std::vector<std::size_t>>& labels,
                           const std::vector<std::size_t>& folds, std::size_t num_classes, LabelMode mode, double threshold) {
  require_aligned(scores.size(), labels.size(), "build_report labels");
  require_aligned(scores.size(), folds.size(), "build_report folds");
  MetricsReport r;
  r.mode = mode;
  r.clips = scores.size();
  std::map<std::size_t, std::vector<std::size_t>> by_fold;
  for (std::size_t i = 0; i < folds.size(); ++i) by_fold[folds[i]].push_back(i);

  if (mode == LabelMode::OneHot) {
    std::vector<std::size_t> truth, pred;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (labels[i].size() != 1) throw Error(ErrorKind::Data, "single-label evaluation needs exactly one label per clip");
      truth.push_back(labels[i][0]);
      pred.push_back(argmax(scores[i]));
    }
    r.confusion = confusion_matrix(truth, pred, num_classes);
    r.per_class = per_class_scores(r.confusion);
    r.accuracy = accuracy(truth, pred);
    for (const auto& [fold, idx] : by_fold) {
      std::size_t hits = 0;
      for (auto i : idx) hits += truth[i] == pred[i];
      r.folds.push_back({fold, idx.size(), safe_ratio(hits, idx.size())});
    }
  } else {
    TagMatrix p(scores.size(), std::vector<std::uint8_t>(num_classes, 0));
    TagMatrix t = p;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      require_aligned(scores[i].size(), num_classes, "build_report scores row");
      for (std::size_t k = 0; k < num_classes; ++k) p[i][k] = scores[i][k] >= threshold;
      for (auto l : labels[i]) t[i].at(l) = 1;
    }
    r.micro = prf1(p, t);
    for (const auto& [fold, idx] : by_fold) {
      TagMatrix fp, ft;
      for (auto i : idx) {
        fp.push_back(p[i]);
        ft.push_back(t[i]);
      }
      r.folds.push_back({fold, idx.size(), prf1(fp, ft).f1});
    }
  }
  if (r.folds.size() < 2) {
    r.folds.clear();
  } else {
    std::vector<double> v;
    for (const auto& f : r.folds) v.push_back(f.score);
    std::tie(r.fold_mean, r.fold_std) = mean_std(v);
  }
  return r;
}

std::string report_to_json(const MetricsReport& r, const std::vector<std::string>& class_names) {
  nlohmann::ordered_json j;
  j["mode"] = to_string(r.mode);
  j["clips"] = r.clips;
  if (r.accuracy) j["accuracy"] = *r.accuracy;
  if (!r.confusion.empty()) j["confusion"] = r.confusion;
  if (!r.per_class.empty()) {
    auto& pc = j["per_class"];
    for (std::size_t k = 0; k < r.per_class.size(); ++k) {
      const auto& s = r.per_class[k];
      pc.push_back({{"class", k < class_names.size() ? class_names[k] : std::to_string(k)},
                    {"precision", s.precision},
                    {"recall", s.recall},
                    {"f1", s.f1},
                    {"support", s.support}});
    }
  }
  if (r.micro) {
    j["micro"] = {{"precision", r.micro->precision}, {"recall", r.micro->recall}, {"f1", r.micro->f1},
                  {"tp", r.micro->tp},               {"fp", r.micro->fp},         {"fn", r.micro->fn}};
    if (!r.micro->warnings.empty()) j["warnings"] = r.micro->warnings;
  }
  if (!r.folds.empty()) {
    auto& f = j["folds"];
    for (const auto& s : r.folds) f.push_back({{"fold", s.fold}, {"clips", s.clips}, {"score", s.score}});
    j["fold_mean"] = r.fold_mean;
    j["fold_std"] = r.fold_std;
  }
  return j.dump(2);
}

}  // namespace csa
