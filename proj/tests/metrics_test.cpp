#include "hmd/metrics.hpp"

#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

namespace hmd::metrics {
namespace {

RealMatrix col(std::vector<double> v) {
  const std::size_t n = v.size();
  return RealMatrix(n, 1, std::move(v));
}
LabelMatrix lab(std::vector<std::uint8_t> v) {
  const std::size_t n = v.size();
  return LabelMatrix(n, 1, std::move(v));
}

TEST(MacroAucTest, PerfectReversedAndTied) {
  EXPECT_EQ(macro_auc(col({0.9, 0.8, 0.1, 0.2}), lab({1, 1, 0, 0})).macro, 1.0);
  EXPECT_EQ(macro_auc(col({0.1, 0.2, 0.9, 0.8}), lab({1, 1, 0, 0})).macro, 0.0);
  // Ties count as correctly ordered.
  EXPECT_EQ(macro_auc(col({0.5, 0.5}), lab({1, 0})).macro, 1.0);
}

TEST(MacroAucTest, ThreeInstanceExample) {
  EXPECT_EQ(macro_auc(col({0.9, 0.8, 0.3}), lab({1, 0, 1})).macro, 0.5);
}

TEST(MacroAucTest, DegenerateLabelsExcludedWithWarning) {
  RealMatrix s(4, 2, std::vector<double>{0.9, 0.1, 0.8, 0.2, 0.1, 0.3, 0.2, 0.4});
  LabelMatrix t(4, 2, std::vector<std::uint8_t>{1, 1, 1, 1, 0, 1, 0, 1});
  testing::WarningLog log;
  auto r = macro_auc(s, t);
  EXPECT_EQ(r.macro, 1.0);
  EXPECT_EQ(r.excluded, (std::vector<std::size_t>{1}));
  EXPECT_TRUE(log.contains("label 1"));
  LabelMatrix all(4, 2, 1);
  EXPECT_THROW(macro_auc(s, all), DataError);
}

TEST(MacroAucTest, MatchesPairCountingOracle) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> coarse(0, 9), bit(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 10 + trial * 9, l = 1 + trial % 11;
    RealMatrix s(n, l);
    LabelMatrix t(n, l);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < l; ++j) {
        s(i, j) = coarse(rng) / 10.0;  // coarse grid forces ties
        t(i, j) = std::uint8_t(bit(rng));
      }
    }
    testing::WarningLog quiet;
    EXPECT_NEAR(macro_auc(s, t).macro, testing::pair_count_macro_auc(s, t), 1e-12);
  }
}

TEST(MacroAucTest, InvariantUnderMonotoneTransform) {
  auto s = testing::random_matrix(60, 3, 1);
  auto t = testing::linear_labels(60, 3, 3, 2).y;
  RealMatrix u = s;
  for (std::size_t i = 0; i < 60; ++i) {
    u(i, 0) = std::exp(3 * s(i, 0));
    u(i, 2) = s(i, 2) * s(i, 2) * s(i, 2) - 7;
  }
  EXPECT_EQ(macro_auc(s, t).macro, macro_auc(u, t).macro);
}

TEST(ReportTest, PerfectPredictions) {
  LabelMatrix t(3, 2, std::vector<std::uint8_t>{1, 0, 0, 1, 1, 1});
  auto r = classification_report(t, t);
  EXPECT_EQ(r.subset_accuracy, 1.0);
  EXPECT_EQ(r.labelwise_accuracy, 1.0);
  EXPECT_EQ(r.macro_precision, 1.0);
  EXPECT_EQ(r.macro_recall, 1.0);
  EXPECT_EQ(r.macro_f1, 1.0);
}

TEST(ReportTest, AllNegativePredictionsHaveZeroRecall) {
  LabelMatrix t(3, 1, std::vector<std::uint8_t>{1, 0, 1});
  auto r = classification_report(LabelMatrix(3, 1, 0), t);
  EXPECT_EQ(r.macro_recall, 0.0);
  EXPECT_EQ(r.macro_precision, 0.0);
}

TEST(ReportTest, OneWrongCell) {
  LabelMatrix t(2, 2, std::vector<std::uint8_t>{1, 0, 0, 1});
  LabelMatrix p(2, 2, std::vector<std::uint8_t>{1, 0, 1, 1});
  auto r = classification_report(p, t);
  EXPECT_EQ(r.subset_accuracy, 0.5);
  EXPECT_EQ(r.labelwise_accuracy, 0.75);
}

TEST(ReportTest, MacroValuesAreMeansOfPerLabel) {
  auto t = testing::linear_labels(50, 4, 4, 3).y;
  auto p = testing::linear_labels(50, 4, 4, 4).y;
  auto r = classification_report(p, t);
  double pr = 0, rc = 0, f1 = 0;
  for (const auto& m : r.per_label) {
    pr += m.precision;
    rc += m.recall;
    f1 += m.f1;
  }
  EXPECT_DOUBLE_EQ(r.macro_precision, pr / 4);
  EXPECT_DOUBLE_EQ(r.macro_recall, rc / 4);
  EXPECT_DOUBLE_EQ(r.macro_f1, f1 / 4);
}

TEST(EvaluateBinaryTest, TwoClassExpansion) {
  std::vector<double> s{0.9, 0.6, 0.4, 0.1};
  std::vector<std::uint8_t> t{1, 0, 1, 0};
  auto r = evaluate_binary(s, t, 0.5);
  EXPECT_EQ(r.label_names, (std::vector<std::string>{"non-AMP", "AMP"}));
  EXPECT_EQ(r.subset_accuracy, 0.5);
  ASSERT_TRUE(r.macro_auc);
  EXPECT_DOUBLE_EQ(*r.macro_auc, 0.75);
}

TEST(RocTest, SeparatedScoresPassThroughCorner) {
  std::vector<double> s{0.9, 0.8, 0.2, 0.1};
  std::vector<std::uint8_t> t{1, 1, 0, 0};
  auto pts = roc_points(s, t);
  bool corner = false;
  for (const auto& p : pts) corner |= p.fpr == 0.0 && p.tpr == 1.0;
  EXPECT_TRUE(corner);
  EXPECT_EQ(pts.front().fpr, 0.0);
  EXPECT_EQ(pts.back().tpr, 1.0);
  EXPECT_EQ(pts.back().fpr, 1.0);
}

TEST(RocTest, SinglePositiveOnTop) {
  auto pts = roc_points(std::vector<double>{0.7, 0.5, 0.2}, std::vector<std::uint8_t>{1, 0, 0});
  ASSERT_GE(pts.size(), 2u);
  EXPECT_EQ(pts[1].tpr, 1.0);
  EXPECT_EQ(pts[1].fpr, 0.0);
}

TEST(RocTest, ConstantScoresGiveDiagonal) {
  auto pts = roc_points(std::vector<double>{0.3, 0.3, 0.3}, std::vector<std::uint8_t>{1, 0, 1});
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts[0].fpr, 0.0);
  EXPECT_EQ(pts[0].tpr, 0.0);
  EXPECT_EQ(pts[1].fpr, 1.0);
  EXPECT_EQ(pts[1].tpr, 1.0);
  EXPECT_THROW(roc_points(std::vector<double>{0.1, 0.2}, std::vector<std::uint8_t>{1, 1}), DataError);
}

TEST(RocTest, TrapezoidAreaEqualsPairAucWithoutTies) {
  auto s = testing::random_matrix(200, 1, 8).column(0);
  auto t = testing::linear_labels(200, 2, 1, 5).y.column(0);
  EXPECT_NEAR(roc_area(roc_points(s, t)), testing::pair_count_auc(s, t), 1e-9);
}

}  // namespace
}  // namespace hmd::metrics
