#include <gtest/gtest.h>

#include "oracles.hpp"
#include "tseg/boundary.hpp"
#include "tseg/losses.hpp"

namespace ts = tseg;
using Tensor = ts::Tensor<double>;

TEST(MedianFrequencyWeights, HandComputedCase) {
  // frequencies {10, 20, 40} -> median 20 -> weights {2, 1, 0.5}
  ts::LabelSequence labels;
  labels.insert(labels.end(), 10, 0);
  labels.insert(labels.end(), 20, 1);
  labels.insert(labels.end(), 40, 2);
  auto w = ts::median_frequency_weights<double>({&labels}, 3);
  EXPECT_DOUBLE_EQ(w[0], 2.0);
  EXPECT_DOUBLE_EQ(w[1], 1.0);
  EXPECT_DOUBLE_EQ(w[2], 0.5);
}

TEST(MedianFrequencyWeights, UniformFrequenciesGiveUnitWeights) {
  ts::LabelSequence labels;
  for (int c = 0; c < 4; ++c) labels.insert(labels.end(), 25, c);
  for (double w : ts::median_frequency_weights<double>({&labels}, 4)) EXPECT_DOUBLE_EQ(w, 1.0);
}

TEST(MedianFrequencyWeights, AbsentClassFallsBackToOne) {
  ts::LabelSequence labels;
  labels.insert(labels.end(), 10, 0);
  labels.insert(labels.end(), 20, 1);
  labels.insert(labels.end(), 40, 3);  // class 2 absent
  auto w = ts::median_frequency_weights<double>({&labels}, 4);
  EXPECT_DOUBLE_EQ(w[0], 2.0);
  EXPECT_DOUBLE_EQ(w[1], 1.0);
  EXPECT_DOUBLE_EQ(w[2], 1.0);
  EXPECT_DOUBLE_EQ(w[3], 0.5);
  EXPECT_THROW(ts::median_frequency_weights<double>({}, 4), std::invalid_argument);
}

namespace {
Tensor random_logits(ts::Rng& rng, long t, long c, double scale = 2.0) {
  auto x = Tensor::zeros({t, c});
  for (long i = 0; i < x.numel(); ++i) x.data()[i] = rng.uniform(-scale, scale);
  return x;
}
}  // namespace

TEST(GsTmse, ConstantLogitsGiveZero) {
  ts::Rng rng(131);
  auto logits = Tensor::zeros({8, 4});
  for (long c = 0; c < 4; ++c)
    for (long t = 0; t < 8; ++t) logits.data()[t * 4 + c] = 0.3 * c;  // constant over time
  auto features = random_logits(rng, 8, 3);
  EXPECT_NEAR(ts::gs_tmse(logits, features).item(), 0.0, 1e-15);
}

TEST(GsTmse, BoundedByTauSquared) {
  ts::Rng rng(137);
  for (int rep = 0; rep < 100; ++rep) {
    auto logits = random_logits(rng, 6, 3, 50.0);
    auto features = random_logits(rng, 6, 2, 1.0);
    const double v = ts::gs_tmse(logits, features).item();
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 16.0);
  }
}

TEST(GsTmse, HandEvaluatedTwoFrameCase) {
  // Two frames with channel probabilities (0.9, 0.1) and (0.1, 0.9),
  // identical features: each channel contributes delta^2 with
  // delta = min(|log 0.1 - log 0.9|, 4), so the mean over the 2x2 grid is
  // delta^2 / 2.
  auto logits = Tensor::from({2, 2}, {std::log(0.9), std::log(0.1), std::log(0.1), std::log(0.9)});
  auto features = Tensor::from({2, 3}, {1, 2, 3, 1, 2, 3});
  const double delta = std::min(std::abs(std::log(0.1) - std::log(0.9)), 4.0);
  EXPECT_NEAR(ts::gs_tmse(logits, features).item(), delta * delta / 2.0, 1e-12);
}

TEST(GsTmse, InvariantToPerFrameConstantShifts) {
  ts::Rng rng(139);
  auto logits = random_logits(rng, 7, 4);
  auto features = random_logits(rng, 7, 3);
  auto shifted = Tensor::zeros({7, 4});
  for (long t = 0; t < 7; ++t) {
    const double c = rng.uniform(-5, 5);
    for (long j = 0; j < 4; ++j) shifted.data()[t * 4 + j] = logits.at(t, j) + c;
  }
  EXPECT_NEAR(ts::gs_tmse(logits, features).item(), ts::gs_tmse(shifted, features).item(), 1e-12);
}

TEST(GsTmse, NeedsTwoFrames) {
  EXPECT_THROW(ts::gs_tmse(Tensor::zeros({1, 3}), Tensor::zeros({1, 2})), std::invalid_argument);
}

TEST(ActionSegmentationLoss, PerfectPredictionApproachesZero) {
  const ts::LabelSequence labels = {0, 0, 1, 1, 2};
  auto logits = Tensor::zeros({5, 3});
  for (long t = 0; t < 5; ++t)
    for (long c = 0; c < 3; ++c) logits.data()[t * 3 + c] = labels[static_cast<size_t>(t)] == c ? 50.0 : -50.0;
  auto features = Tensor::zeros({5, 2});
  std::vector<double> weights = {1, 1, 1};
  // Smoothing is not zero at the genuine transitions, but with one-hot
  // probabilities the classification term vanishes.
  std::vector<double> cls, smo;
  ts::action_segmentation_loss<double>({logits}, labels, weights, features, {}, &cls, &smo);
  EXPECT_NEAR(cls.at(0), 0.0, 1e-12);
}

TEST(ActionSegmentationLoss, UniformLogitsGiveWeightedLogC) {
  const long t = 12, c = 5;
  ts::LabelSequence labels;
  for (long i = 0; i < t; ++i) labels.push_back(static_cast<int>(i % c));
  auto logits = Tensor::zeros({t, c});
  auto features = Tensor::zeros({t, 2});
  std::vector<double> weights = {2.0, 1.0, 0.5, 1.5, 1.0};
  double expect = 0;
  for (long i = 0; i < t; ++i) expect += weights[static_cast<size_t>(labels[static_cast<size_t>(i)])] * std::log(c);
  expect /= t;
  std::vector<double> cls;
  ts::action_segmentation_loss<double>({logits}, labels, weights, features, {}, &cls, nullptr);
  EXPECT_NEAR(cls.at(0), expect, 1e-12);
}

TEST(ActionSegmentationLoss, MeanOverStagesAndGradCheck) {
  ts::Rng rng(149);
  const ts::LabelSequence labels = {0, 1, 2, 1};
  auto s1 = random_logits(rng, 4, 3);
  auto s2 = random_logits(rng, 4, 3);
  auto features = random_logits(rng, 4, 2, 0.5);
  std::vector<double> weights = {1.0, 0.7, 1.3};
  const double both =
      ts::action_segmentation_loss<double>({s1, s2}, labels, weights, features).item();
  const double first = ts::action_segmentation_loss<double>({s1}, labels, weights, features).item();
  const double second = ts::action_segmentation_loss<double>({s2}, labels, weights, features).item();
  EXPECT_NEAR(both, 0.5 * (first + second), 1e-12);

  s1.set_requires_grad(true);
  s2.set_requires_grad(true);
  auto build = [&] {
    return ts::action_segmentation_loss<double>({s1, s2}, labels, weights, features);
  };
  auto res = oracles::check_gradients({s1, s2}, build);
  EXPECT_TRUE(res.ok()) << res.max_rel_err;
}

TEST(BoundaryLoss, NearZeroWhenProbabilitiesMatchTargets) {
  const std::vector<uint8_t> gt = {1, 0, 0, 1, 0};
  auto p = Tensor::from({5, 1}, {1.0, 0.0, 0.0, 1.0, 0.0});
  const double v = ts::boundary_regression_loss<double>({p}, gt, 2.5).item();
  EXPECT_NEAR(v, 0.0, 1e-4);  // clamped at 1e-7, not exactly zero
}

TEST(BoundaryLoss, SingleFrameLogTwo) {
  const std::vector<uint8_t> gt = {1};
  auto p = Tensor::from({1, 1}, {0.5});
  EXPECT_NEAR(ts::boundary_regression_loss<double>({p}, gt, 1.0).item(), std::log(2.0), 1e-12);
}

TEST(BoundaryLoss, StrictlyDecreasesTowardTarget) {
  const std::vector<uint8_t> gt = {1, 0, 1, 0};
  double prev = 1e300;
  for (double q : {0.3, 0.5, 0.7, 0.9}) {
    auto p = Tensor::from({4, 1}, {q, 1 - q, q, 1 - q});
    const double v = ts::boundary_regression_loss<double>({p}, gt, 3.0).item();
    EXPECT_LT(v, prev);
    prev = v;
  }
}

TEST(BoundaryLoss, GradientMatchesFiniteDifferences) {
  ts::Rng rng(151);
  const std::vector<uint8_t> gt = {1, 0, 0, 1, 0, 0};
  auto logits = random_logits(rng, 6, 1);
  logits.set_requires_grad(true);
  auto build = [&] {
    return ts::boundary_regression_loss<double>({ts::sigmoid(logits)}, gt, 4.0);
  };
  auto res = oracles::check_gradients({logits}, build);
  EXPECT_TRUE(res.ok()) << res.max_rel_err;
}

TEST(BoundaryGroundTruth, PositiveCountEqualsSegmentCount) {
  ts::Rng rng(157);
  for (int rep = 0; rep < 30; ++rep) {
    auto labels = oracles::random_labels_of_length(rng, 40, 8, 5);
    auto y = ts::boundary_ground_truth(labels);
    long positives = 0;
    for (uint8_t v : y) positives += v;
    EXPECT_EQ(positives, static_cast<long>(ts::segments_from_labels(labels).size()));
    EXPECT_EQ(y[0], 1);
  }
}

TEST(TotalLoss, AdditiveAndItemized) {
  ts::Rng rng(163);
  const ts::LabelSequence labels = {0, 0, 1, 2, 2, 2};
  auto s1 = random_logits(rng, 6, 3);
  auto s2 = random_logits(rng, 6, 3);
  auto features = random_logits(rng, 6, 2, 0.5);
  auto b1 = ts::sigmoid(random_logits(rng, 6, 1));
  auto b2 = ts::sigmoid(random_logits(rng, 6, 1));
  const auto gt = ts::boundary_ground_truth(labels);
  std::vector<double> weights = {1, 1, 1};
  ts::LossConfig cfg;
  ts::LossReport report;
  const double total = ts::total_loss<double>({s1, s2}, {b1, b2}, labels, weights, features, gt,
                                              3.0, cfg, &report)
                           .item();
  const double as =
      ts::action_segmentation_loss<double>({s1, s2}, labels, weights, features, cfg).item();
  const double br = ts::boundary_regression_loss<double>({b1, b2}, gt, 3.0).item();
  EXPECT_NEAR(total, as + cfg.mu_boundary * br, 1e-9);
  EXPECT_NEAR(report.total, total, 1e-12);
  EXPECT_NEAR(report.action_segmentation, as, 1e-12);
  EXPECT_NEAR(report.boundary, br, 1e-12);
  ASSERT_EQ(report.stage_classification.size(), 2u);
  ASSERT_EQ(report.stage_boundary.size(), 2u);

  // mu = 0 reduces the total to the segmentation loss exactly.
  ts::LossConfig no_br = cfg;
  no_br.mu_boundary = 0.0;
  const double total_no_br =
      ts::total_loss<double>({s1, s2}, {b1, b2}, labels, weights, features, gt, 3.0, no_br, nullptr)
          .item();
  EXPECT_NEAR(total_no_br, as, 1e-12);

  // JSON line is well formed enough to carry the itemization.
  const std::string line = report.to_json();
  EXPECT_NE(line.find("\"total\":"), std::string::npos);
  EXPECT_NE(line.find("\"stage_cls\":["), std::string::npos);
}

TEST(TotalLoss, GradientThroughBothBranches) {
  ts::Rng rng(167);
  const ts::LabelSequence labels = {0, 1, 1, 2};
  auto seg = random_logits(rng, 4, 3);
  auto blogits = random_logits(rng, 4, 1);
  auto features = random_logits(rng, 4, 2, 0.5);
  seg.set_requires_grad(true);
  blogits.set_requires_grad(true);
  const auto gt = ts::boundary_ground_truth(labels);
  std::vector<double> weights = {1.2, 0.8, 1.0};
  auto build = [&] {
    return ts::total_loss<double>({seg}, {ts::sigmoid(blogits)}, labels, weights, features, gt,
                                  2.0, {}, nullptr);
  };
  auto res = oracles::check_gradients({seg, blogits}, build);
  EXPECT_TRUE(res.ok()) << res.max_rel_err;
}
