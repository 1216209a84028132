// Copyright 2026 The oarsi-mt Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "oarsi/errors.hpp"
#include "oarsi/metrics.hpp"
#include "oarsi/tasks.hpp"
#include "support/metric_oracles.hpp"

namespace oarsi {
namespace {

using testing::Instance;

TEST(Kappa, PerfectAgreementIsOne) {
  std::vector<int> y{0, 1, 2, 3, 1};
  for (auto w : {KappaWeighting::kNone, KappaWeighting::kLinear, KappaWeighting::kQuadratic})
    EXPECT_DOUBLE_EQ(cohen_kappa(y, y, 4, w), 1.0);
}

TEST(Kappa, CompleteDisagreementIsMinusOne) {
  std::vector<int> t{0, 0, 1, 1}, p{1, 1, 0, 0};
  EXPECT_DOUBLE_EQ(cohen_kappa(t, p, 2), -1.0);
  EXPECT_DOUBLE_EQ(cohen_kappa(t, p, 2, KappaWeighting::kNone), -1.0);
}

TEST(Kappa, WorkedExampleMatchesOracle) {
  std::vector<int> t{0, 0, 1, 2, 3}, p{0, 1, 1, 2, 2};
  const double oracle = testing::kappa_oracle(t, p, 4, 2);
  EXPECT_NEAR(cohen_kappa(t, p, 4), oracle, 1e-9);
  EXPECT_GT(oracle, 0.7);
  EXPECT_LT(oracle, 0.9);
}

TEST(Kappa, DegenerateExpectationIsUndefined) {
  std::vector<int> t{1, 1, 1}, p{1, 1, 1};
  EXPECT_THROW(cohen_kappa(t, p, 3), UndefinedStatistic);
  EXPECT_THROW(cohen_kappa(t, p, 3, KappaWeighting::kNone), UndefinedStatistic);
}

TEST(Kappa, InputErrors) {
  std::vector<int> e;
  EXPECT_THROW(cohen_kappa(e, e, 3), UsageError);
  std::vector<int> a{0, 3}, b{0, 1};
  EXPECT_THROW(cohen_kappa(a, b, 3), UsageError);
  std::vector<int> c{0};
  EXPECT_THROW(cohen_kappa(a, c, 4), UsageError);
  EXPECT_THROW(kappa_weighting_from_string("cubic"), ConfigError);
}

TEST(Metrics, RandomInstancesMatchOracles) {
  std::mt19937_64 rng(2024);
  int checked_kappa = 0;
  for (int it = 0; it < 200; ++it) {
    const Instance in = testing::random_instance(rng);
    for (int power = 0; power <= 2; ++power) {
      const auto w = static_cast<KappaWeighting>(power);
      const double oracle = testing::kappa_oracle(in.y_true, in.y_pred, in.k, power);
      if (std::isnan(oracle)) {
        EXPECT_THROW(cohen_kappa(in.y_true, in.y_pred, in.k, w), UndefinedStatistic);
      } else {
        EXPECT_NEAR(cohen_kappa(in.y_true, in.y_pred, in.k, w), oracle, 1e-9);
        ++checked_kappa;
      }
    }
    EXPECT_NEAR(balanced_accuracy(in.y_true, in.y_pred, in.k),
                testing::balanced_accuracy_oracle(in.y_true, in.y_pred), 1e-9);
    EXPECT_NEAR(f1_macro(in.y_true, in.y_pred, in.k),
                testing::f1_oracle(in.y_true, in.y_pred, in.k, false), 1e-9);
    EXPECT_NEAR(f1_macro(in.y_true, in.y_pred, in.k, F1Mean::kGeometric),
                testing::f1_oracle(in.y_true, in.y_pred, in.k, true), 1e-9);
    EXPECT_NEAR(mse_grades(in.y_true, in.y_pred), testing::mse_oracle(in.y_true, in.y_pred), 1e-9);
  }
  EXPECT_GT(checked_kappa, 500);
}

TEST(Metrics, QuadraticKappaReversalInvariance) {
  std::mt19937_64 rng(77);
  for (int it = 0; it < 200; ++it) {
    Instance in = testing::random_instance(rng);
    if (std::isnan(testing::kappa_oracle(in.y_true, in.y_pred, in.k, 2))) continue;
    auto rt = in.y_true, rp = in.y_pred;
    for (auto& v : rt) v = in.k - 1 - v;
    for (auto& v : rp) v = in.k - 1 - v;
    EXPECT_NEAR(cohen_kappa(in.y_true, in.y_pred, in.k), cohen_kappa(rt, rp, in.k), 1e-9);
  }
}

TEST(Metrics, BalancedAccuracyExamples) {
  std::vector<int> t{0, 0, 1}, p{0, 1, 1};
  EXPECT_DOUBLE_EQ(balanced_accuracy(t, p, 2), 75.0);
  EXPECT_DOUBLE_EQ(balanced_accuracy(t, t, 2), 100.0);
  EXPECT_DOUBLE_EQ(f1_macro(t, t, 2), 1.0);
  EXPECT_DOUBLE_EQ(mse_grades(t, t), 0.0);
  std::vector<int> a{0, 1, 2, 3}, b{1, 2, 3, 2};
  EXPECT_DOUBLE_EQ(mse_grades(a, b), 1.0);
  std::vector<int> e;
  EXPECT_THROW(balanced_accuracy(e, e, 2), UsageError);
  EXPECT_THROW(f1_macro(e, e, 2), UsageError);
  EXPECT_THROW(mse_grades(e, e), UsageError);
}

TEST(Metrics, BalancedTruthMakesBalancedAccuracyPlainAccuracy) {
  std::mt19937_64 rng(5);
  for (int it = 0; it < 100; ++it) {
    const int k = 2 + static_cast<int>(rng() % 4);
    const int per = 1 + static_cast<int>(rng() % 8);
    std::vector<int> t, p;
    int correct = 0;
    for (int c = 0; c < k; ++c)
      for (int r = 0; r < per; ++r) {
        t.push_back(c);
        p.push_back(static_cast<int>(rng() % static_cast<unsigned>(k)));
        correct += p.back() == c;
      }
    EXPECT_EQ(balanced_accuracy(t, p, k), 100.0 * correct / static_cast<double>(t.size()));
  }
}

TEST(Confusion, CountsAndRowPercentages) {
  std::vector<int> t{0, 0, 0, 1, 2, 2}, p{0, 1, 1, 1, 0, 2};
  auto cm = confusion_matrix(t, p, 4);
  EXPECT_EQ(cm.total(), 6);
  EXPECT_EQ(cm.at(0, 1), 2);
  EXPECT_EQ(cm.at(2, 0), 1);
  auto pct = cm.row_percentages();
  for (int r = 0; r < 3; ++r) {
    double s = 0;
    for (int c = 0; c < 4; ++c) s += pct[static_cast<std::size_t>(r * 4 + c)];
    EXPECT_NEAR(s, 100.0, 0.01);
  }
  for (int c = 0; c < 4; ++c) EXPECT_EQ(pct[static_cast<std::size_t>(12 + c)], 0.0);
}

TEST(Curves, MannWhitneyExample) {
  std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  std::vector<int> y{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(roc_curve(s, y).area, 0.75);
  EXPECT_DOUBLE_EQ(mann_whitney_auc(s, y), 0.75);
}

TEST(Curves, SeparatingAndConstantScores) {
  std::vector<double> s{0.1, 0.2, 0.7, 0.9};
  std::vector<int> y{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(roc_curve(s, y).area, 1.0);
  EXPECT_DOUBLE_EQ(pr_curve(s, y).area, 1.0);
  std::vector<double> c(4, 0.5);
  EXPECT_DOUBLE_EQ(roc_curve(c, y).area, 0.5);
  auto roc = roc_curve(c, y);
  ASSERT_EQ(roc.points.size(), 2u);
  EXPECT_EQ(roc.points.back().x, 1.0);
  EXPECT_EQ(roc.points.back().y, 1.0);
}

TEST(Curves, RandomAucEqualsMannWhitneyAndOracle) {
  std::mt19937_64 rng(99);
  for (int it = 0; it < 200; ++it) {
    const std::size_t n = 2 + rng() % 49;
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 7) / 7.0;  // frequent ties
      y[i] = static_cast<int>(rng() % 2);
    }
    y[0] = 0;
    y[1] = 1;
    const double auc = roc_curve(s, y).area;
    EXPECT_EQ(auc, mann_whitney_auc(s, y));
    EXPECT_NEAR(auc, testing::auc_oracle(s, y), 1e-9);
    EXPECT_NEAR(pr_curve(s, y).area, testing::average_precision_oracle(s, y), 1e-9);
  }
}

TEST(Curves, SingleClassIsUndefined) {
  std::vector<double> s{0.1, 0.2};
  std::vector<int> y{1, 1};
  EXPECT_THROW(roc_curve(s, y), UndefinedStatistic);
  EXPECT_THROW(pr_curve(s, y), UndefinedStatistic);
}

TEST(Curves, BinarizeUsesTaskThreshold) {
  // KL: positive mass is classes 2..4; OARSI: classes 1..3.
  std::vector<std::vector<double>> kl{{0.5, 0.3, 0.1, 0.1, 0.0}, {0.0, 0.1, 0.3, 0.3, 0.3}};
  std::vector<int> y{1, 2};
  auto c = binarize_and_curve(kl, y, kKL, CurveKind::kRoc);
  EXPECT_DOUBLE_EQ(c.area, 1.0);
  EXPECT_DOUBLE_EQ(c.points[1].threshold, 0.9);
  std::vector<std::vector<double>> fo{{0.4, 0.6, 0, 0}, {0.9, 0.1, 0, 0}};
  std::vector<int> yf{1, 0};
  EXPECT_DOUBLE_EQ(binarize_and_curve(fo, yf, kFO_L, CurveKind::kRoc).area, 1.0);
  EXPECT_THROW(binarize_and_curve(kl, y, kFO_L, CurveKind::kRoc), UsageError);
}

// ---------------------------------------------------------------------------
// bootstrap

TEST(Bootstrap, ResamplesPreserveStratumCounts) {
  std::vector<int> strata{0, 0, 0, 1, 2, 2, 1, 0, 2, 2};
  for (std::size_t it = 0; it < 100; ++it) {
    auto idx = stratified_resample(strata, 11, it);
    ASSERT_EQ(idx.size(), strata.size());
    std::map<int, int> want, got;
    for (int s : strata) ++want[s];
    for (auto i : idx) ++got[strata[i]];
    EXPECT_EQ(want, got);
  }
}

TEST(Bootstrap, ConstantStatisticDegenerates) {
  std::vector<int> strata{0, 1, 1, 0, 2};
  auto ci = bootstrap_ci([](const auto&) { return 0.625; }, strata, 100, 0.95, 3);
  EXPECT_EQ(ci.point, 0.625);
  EXPECT_EQ(ci.ci_low, 0.625);
  EXPECT_EQ(ci.ci_high, 0.625);
  EXPECT_TRUE(ci.contains_point);
}

TEST(Bootstrap, ParallelEqualsSerial) {
  std::mt19937_64 rng(12);
  Instance in = testing::random_instance(rng, 40, 4);
  IndexStatistic ba = [&](const std::vector<std::size_t>& idx) {
    std::vector<int> t, p;
    for (auto i : idx) {
      t.push_back(in.y_true[i]);
      p.push_back(in.y_pred[i]);
    }
    return balanced_accuracy(t, p, in.k);
  };
  auto serial = bootstrap_ci(ba, in.y_true, 100, 0.95, 8, 1);
  auto parallel = bootstrap_ci(ba, in.y_true, 100, 0.95, 8, 4);
  EXPECT_EQ(serial.ci_low, parallel.ci_low);
  EXPECT_EQ(serial.ci_high, parallel.ci_high);
  EXPECT_EQ(serial.point, parallel.point);
  EXPECT_LE(serial.ci_low, serial.ci_high);
}

TEST(Bootstrap, MatchesIndependentResamplingLoop) {
  std::mt19937_64 rng(13);
  Instance in = testing::random_instance(rng, 45, 3);
  IndexStatistic ba = [&](const std::vector<std::size_t>& idx) {
    std::vector<int> t, p;
    for (auto i : idx) {
      t.push_back(in.y_true[i]);
      p.push_back(in.y_pred[i]);
    }
    return balanced_accuracy(t, p, in.k);
  };
  auto ci = bootstrap_ci(ba, in.y_true, 100, 0.95, 21);
  auto [lo, hi] = testing::bootstrap_ba_oracle(in.y_true, in.y_pred, 100, 0.95, 21);
  EXPECT_NEAR(ci.ci_low, lo, 1e-9);
  EXPECT_NEAR(ci.ci_high, hi, 1e-9);
}

TEST(Bootstrap, TooManyUndefinedIterationsFail) {
  std::vector<int> strata(20, 0);
  int calls = 0;
  IndexStatistic flaky = [&](const std::vector<std::size_t>&) -> double {
    if (calls++ == 0) return 1.0;  // point estimate
    if (calls % 3 == 0) throw UndefinedStatistic("x");
    return 1.0;
  };
  try {
    bootstrap_ci(flaky, strata, 100, 0.95, 0);
    FAIL();
  } catch (const BootstrapError& e) {
    EXPECT_NE(std::string(e.what()).find("33 of 100"), std::string::npos) << e.what();
  }
  calls = 0;
  IndexStatistic rare = [&](const std::vector<std::size_t>&) -> double {
    if (calls++ % 10 == 5) return std::nan("");
    return 2.0;
  };
  auto ci = bootstrap_ci(rare, strata, 100, 0.95, 0);
  EXPECT_EQ(ci.undefined_iterations, 10);
  EXPECT_EQ(ci.ci_low, 2.0);
}

}  // namespace
}  // namespace oarsi
