#include <gtest/gtest.h>

#include <cmath>

#include "ehrmamba/metrics.hpp"
#include "ehrmamba/tensor.hpp"
#include "oracles.hpp"

using namespace ehrmamba;

namespace {

struct Instance {
  std::vector<double> s;
  std::vector<int> y;
};

// Coarse score grids force ties; labels always contain both classes.
Instance random_instance(Rng& rng) {
  Instance in;
  const auto n = static_cast<std::size_t>(2 + uniform01(rng) * 199);
  const double grid = uniform01(rng) < 0.5 ? 10.0 : 1e6;
  for (std::size_t i = 0; i < n; ++i) {
    in.s.push_back(std::floor(uniform01(rng) * grid) / grid);
    in.y.push_back(uniform01(rng) < 0.3 ? 1 : 0);
  }
  in.y[0] = 1;
  in.y[1] = 0;
  return in;
}

}  // namespace

TEST(Metrics, PerfectSeparation) {
  const std::vector<double> s{0.9, 0.8, 0.2, 0.1};
  const std::vector<int> y{1, 1, 0, 0};
  const auto r = compute_metrics(s, y);
  EXPECT_EQ(r.auroc, 1.0);
  EXPECT_EQ(r.auprc, 1.0);
  EXPECT_EQ(r.f1, 1.0);
  EXPECT_EQ(r.n_pos, 2u);
  EXPECT_EQ(r.n_neg, 2u);
}

TEST(Metrics, ConcordantPairExample) {
  const std::vector<double> s{0.9, 0.8, 0.3, 0.2};
  const std::vector<int> y{1, 0, 1, 0};
  EXPECT_DOUBLE_EQ(auroc(s, y), 0.75);
  EXPECT_DOUBLE_EQ(oracles::pairwise_auroc(s, y), 0.75);
}

TEST(Metrics, F1HandCount) {
  // threshold 0.5: TP = index 0, FP = index 1, FN = index 2
  const std::vector<double> s{0.9, 0.7, 0.2, 0.1};
  const std::vector<int> y{1, 0, 1, 0};
  EXPECT_DOUBLE_EQ(f1_score(s, y, 0.5), 0.5);
  const std::vector<int> none{0, 0, 0, 0};
  EXPECT_EQ(f1_score(std::vector<double>{0.1, 0.1, 0.1, 0.1}, none), 0.0);
}

TEST(Metrics, MatchesBruteForceOracles) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto in = random_instance(rng);
    ASSERT_NEAR(auroc(in.s, in.y), oracles::pairwise_auroc(in.s, in.y), 1e-9) << i;
    ASSERT_NEAR(auprc(in.s, in.y), oracles::sweep_auprc(in.s, in.y), 1e-9) << i;
    const double t = uniform01(rng);
    ASSERT_NEAR(f1_score(in.s, in.y, t), oracles::confusion_f1(in.s, in.y, t), 1e-12) << i;
  }
}

TEST(Metrics, InvariantUnderIncreasingTransform) {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const auto in = random_instance(rng);
    std::vector<double> t;
    for (double v : in.s) t.push_back(std::exp(3.0 * v) - 7.0);
    EXPECT_NEAR(auroc(in.s, in.y), auroc(t, in.y), 1e-12);
    EXPECT_NEAR(auprc(in.s, in.y), auprc(t, in.y), 1e-12);
  }
}

TEST(Metrics, RangesAndCounts) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const auto in = random_instance(rng);
    const auto r = compute_metrics(in.s, in.y);
    for (double v : {r.auroc, r.auprc, r.f1}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_EQ(r.n_pos + r.n_neg, in.s.size());
  }
}

TEST(Metrics, SingleClassAndBadInput) {
  const std::vector<double> s{0.2, 0.9};
  const std::vector<int> y{1, 1};
  EXPECT_THROW(auroc(s, y), DataError);
  EXPECT_THROW(auprc(s, y), DataError);
  EXPECT_THROW(compute_metrics(s, y), DataError);
  EXPECT_DOUBLE_EQ(f1_score(s, y), 2.0 / 3.0);
  EXPECT_THROW(auroc(s, std::vector<int>{1}), ShapeError);
  EXPECT_THROW(auroc(s, std::vector<int>{1, 2}), DataError);
}
