// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "csa/error.hpp"
#include "csa/metrics.hpp"

using namespace csa;

TEST(Argmax, LowestIndexWinsTies) {
  EXPECT_EQ(argmax(std::vector<double>{0.2, 0.5, 0.5, 0.1}), 1u);
  EXPECT_EQ(argmax(std::vector<double>{0.25, 0.25, 0.25, 0.25}), 0u);
}

TEST(Confusion, RowsAreTruth) {
  auto cm = confusion_matrix({0, 0, 1, 2, 2, 2}, {0, 1, 1, 2, 0, 2}, 3);
  EXPECT_EQ(cm, (ConfusionMatrix{{1, 1, 0}, {0, 1, 0}, {1, 0, 2}}));
  std::size_t total = 0, trace = 0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) total += cm[i][j], trace += i == j ? cm[i][j] : 0;
  EXPECT_EQ(total, 6u);
  EXPECT_DOUBLE_EQ(accuracy({0, 0, 1, 2, 2, 2}, {0, 1, 1, 2, 0, 2}), static_cast<double>(trace) / 6.0);
  auto pc = per_class_scores(cm);
  EXPECT_EQ(pc[2].support, 3u);
  EXPECT_DOUBLE_EQ(pc[1].precision, 0.5);
  EXPECT_DOUBLE_EQ(pc[1].recall, 1.0);
  EXPECT_DOUBLE_EQ(pc[2].recall, 2.0 / 3.0);
}

TEST(Prf1, Examples) {
  TagMatrix truth{{1, 0, 1}, {0, 1, 0}};
  auto perfect = prf1(truth, truth);
  EXPECT_EQ(perfect.precision, 1.0);
  EXPECT_EQ(perfect.recall, 1.0);
  EXPECT_EQ(perfect.f1, 1.0);

  TagMatrix everything{{1, 1, 1}, {1, 1, 1}};
  auto all = prf1(everything, truth);
  EXPECT_EQ(all.recall, 1.0);
  EXPECT_DOUBLE_EQ(all.precision, 3.0 / 6.0);

  // TP = 2, FP = 1, FN = 1.
  TagMatrix t2{{1, 1, 0}, {0, 1, 0}};
  TagMatrix p2{{1, 0, 1}, {0, 1, 0}};
  auto r = prf1(p2, t2);
  EXPECT_EQ(r.tp, 2u);
  EXPECT_EQ(r.fp, 1u);
  EXPECT_EQ(r.fn, 1u);
  EXPECT_DOUBLE_EQ(r.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.f1, 2.0 / 3.0);
}

TEST(Prf1, ZeroDenominatorWarns) {
  TagMatrix zeros{{0, 0}, {0, 0}};
  auto r = prf1(zeros, zeros);
  EXPECT_EQ(r.precision, 0.0);
  EXPECT_EQ(r.recall, 0.0);
  EXPECT_EQ(r.f1, 0.0);
  EXPECT_EQ(r.warnings.size(), 2u);
}

TEST(Prf1, ShapeMismatch) {
  try {
    prf1(TagMatrix{{1, 0}}, TagMatrix{{1, 0}, {0, 1}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Alignment);
  }
  EXPECT_THROW(prf1(TagMatrix{{1, 0}}, TagMatrix{{1, 0, 0}}), Error);
}

TEST(CorrectedDegradedKept, IdenticalModels) {
  std::vector<std::size_t> truth{0, 1, 2, 1, 0}, m{0, 2, 2, 1, 1};
  auto r = corrected_degraded_kept(m, m, truth);
  EXPECT_EQ(r.corrected, 0.0);
  EXPECT_EQ(r.degraded, 0.0);
  EXPECT_EQ(r.kept, accuracy(truth, m));
}

TEST(CorrectedDegradedKept, FourClipExample) {
  // M1 right on clips 1 and 2, M2 right on clips 2 and 3.
  std::vector<std::size_t> truth{0, 0, 0, 0};
  std::vector<std::size_t> m1{0, 0, 1, 1}, m2{1, 0, 0, 1};
  auto r = corrected_degraded_kept(m1, m2, truth);
  EXPECT_EQ(r.corrected, 0.25);
  EXPECT_EQ(r.degraded, 0.25);
  EXPECT_EQ(r.kept, 0.25);
}

TEST(CorrectedDegradedKept, IdentitiesOnRandomPairs) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 40, c = 2 + rng() % 5;
    std::vector<std::size_t> t(n), a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = rng() % c, a[i] = rng() % c, b[i] = rng() % c;
    auto r = corrected_degraded_kept(a, b, t);
    EXPECT_EQ(r.kept_clips + r.corrected_clips, correct_count(t, b));
    EXPECT_EQ(r.kept_clips + r.degraded_clips, correct_count(t, a));
    EXPECT_EQ(r.total, n);
    EXPECT_EQ(r.kept, static_cast<double>(r.kept_clips) / static_cast<double>(n));
    EXPECT_EQ(r.corrected, static_cast<double>(r.corrected_clips) / static_cast<double>(n));
    EXPECT_EQ(r.degraded, static_cast<double>(r.degraded_clips) / static_cast<double>(n));
  }
}

TEST(CorrectedDegradedKept, LengthMismatch) {
  try {
    corrected_degraded_kept({0, 1}, {0}, {0, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Alignment);
  }
}

TEST(MeanStd, Sample) {
  auto [m, s] = mean_std({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(m, 2.5);
  EXPECT_NEAR(s, std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_EQ(mean_std({7.0}).second, 0.0);
}

TEST(Report, PerfectFitIsDiagonal) {
  std::vector<std::vector<double>> scores{{0.9, 0.1}, {0.2, 0.8}, {0.6, 0.4}};
  auto r = build_report(scores, {{0}, {1}, {0}}, {1, 1, 1}, 2, LabelMode::OneHot);
  ASSERT_TRUE(r.accuracy);
  EXPECT_EQ(*r.accuracy, 1.0);
  EXPECT_EQ(r.confusion, (ConfusionMatrix{{2, 0}, {0, 1}}));
  EXPECT_TRUE(r.folds.empty());
  EXPECT_FALSE(r.micro);
}

TEST(Report, TwoFoldsCarryMeanStd) {
  std::vector<std::vector<double>> scores{{0.9, 0.1}, {0.2, 0.8}, {0.6, 0.4}, {0.7, 0.3}};
  auto r = build_report(scores, {{0}, {1}, {1}, {0}}, {1, 1, 2, 2}, 2, LabelMode::OneHot);
  ASSERT_EQ(r.folds.size(), 2u);
  EXPECT_EQ(r.folds[0].score, 1.0);
  EXPECT_EQ(r.folds[1].score, 0.5);
  EXPECT_DOUBLE_EQ(r.fold_mean, 0.75);
  EXPECT_NEAR(r.fold_std, std::sqrt(0.125), 1e-15);
  const auto json = report_to_json(r, {"a", "b"});
  EXPECT_NE(json.find("\"folds\""), std::string::npos);
  EXPECT_NE(json.find("fold_std"), std::string::npos);
}

TEST(Report, MultiHotUsesMicroScores) {
  std::vector<std::vector<double>> scores{{0.9, 0.6, 0.1}, {0.2, 0.4, 0.8}};
  auto r = build_report(scores, {{0, 1}, {2}}, {1, 1}, 3, LabelMode::MultiHot, 0.5);
  EXPECT_FALSE(r.accuracy);
  ASSERT_TRUE(r.micro);
  EXPECT_EQ(r.micro->f1, 1.0);
  EXPECT_EQ(report_to_json(r, {"a", "b", "c"}).find("\"accuracy\""), std::string::npos);
}
