#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "vbcom/composer.hpp"

using namespace vbcom;

namespace {

const Action kVisionAct{1.0, 0.0, 0.0};
const Action kBlindAct{-1.0, 0.0, 0.0};

Selection drive(ComposerState& s, const ComposerConfig& c, double vision, double blind, double speed = 0.0) {
  Selection sel = select_action(s, c, {vision, blind}, kVisionAct, kBlindAct, speed);
  s = sel.next;
  return sel;
}

}  // namespace

TEST(LambdaReturn, HandExample) {
  const std::vector<double> g{1.0, 2.0, 4.0};
  const auto t = lambda_return_targets(g, 1, 0.5);
  EXPECT_DOUBLE_EQ(t[0], 0.5 * (1.0 + 0.5 * 2.0));
  EXPECT_DOUBLE_EQ(t[1], 0.5 * (2.0 + 0.5 * 4.0));
  EXPECT_DOUBLE_EQ(t[2], 0.5 * 4.0);
}

TEST(LambdaReturn, NormalizedConstantSequence) {
  const std::vector<double> g(20, 3.0);
  const auto t = lambda_return_targets(g, 5, 0.9, true);
  EXPECT_NEAR(t[0], 3.0, 1e-12);
  const auto raw = lambda_return_targets(g, 5, 0.9, false);
  EXPECT_NEAR(raw[0], 3.0 * (1.0 - std::pow(0.9, 6)), 1e-12);
}

TEST(LambdaReturn, PeriodZeroAndErrors) {
  const std::vector<double> g{2.0, 4.0};
  EXPECT_DOUBLE_EQ(lambda_return_targets(g, 0, 0.75)[1], 0.25 * 4.0);
  EXPECT_THROW(lambda_return_targets(std::vector<double>{}, 1, 0.5), std::invalid_argument);
  EXPECT_THROW(lambda_return_targets(g, -1, 0.5), std::invalid_argument);
}

TEST(MonteCarlo, TruncatedDiscountedSum) {
  const std::vector<double> r{1.0, 1.0, 1.0, 1.0};
  const auto t = mc_return_targets(r, 0.5, 2);
  EXPECT_DOUBLE_EQ(t[0], 1.75);
  EXPECT_DOUBLE_EQ(t[2], 1.5);
  EXPECT_DOUBLE_EQ(t[3], 1.0);
}

TEST(Dataset, DropsOpenWindowsAndCutsAtEpisodeEnd) {
  RolloutBuffer b(1, 6, 1, 1, 2, 3);
  for (int i = 0; i < 6; ++i) b.rewards[i] = 1.0;
  b.episode_end[2] = 1;
  b.terminated[2] = 1;
  b.finalize(0.99, 0.95);
  ComposerConfig c;
  c.switch_period = 2;
  const auto d = return_estimator_dataset(b, c, EstimatorTarget::MonteCarlo, 1.0);
  EXPECT_EQ(d.anchors, (std::vector<int>{0, 1, 2, 3}));
  EXPECT_DOUBLE_EQ(d.targets[0], 3.0);
  EXPECT_DOUBLE_EQ(d.targets[1], 2.0);
  EXPECT_DOUBLE_EQ(d.targets[2], 1.0);
  EXPECT_DOUBLE_EQ(d.targets[3], 3.0);
}

TEST(Dataset, RequiresFinalizedBuffer) {
  RolloutBuffer b(1, 4, 1, 1, 2, 3);
  EXPECT_THROW(return_estimator_dataset(b, ComposerConfig{}, EstimatorTarget::TdLambda, 0.99), std::logic_error);
}

TEST(Estimator, RejectsWrongInput) {
  RolloutBuffer b(1, 4, 1, 1, 2, 3);
  b.finalize(0.99, 0.95);
  Mlp net({3, 4, 1});
  Adam adam;
  std::mt19937_64 rng(1);
  EXPECT_THROW(train_return_estimator(net, adam, b, ComposerConfig{}, EstimatorTarget::TdLambda, 0.99, 1, 4, rng),
               std::invalid_argument);
}

TEST(Threshold, MeanMinusAlpha) {
  const std::vector<double> w{1.0, 2.0, 3.0};
  EXPECT_DOUBLE_EQ(compute_threshold(w, 0.5), 1.5);
  EXPECT_THROW(compute_threshold(std::vector<double>{}, 0.5), std::invalid_argument);
}

TEST(SwitchRule, StartsInVisionAndPrefersIt) {
  ComposerConfig c;
  ComposerState s = initial_composer_state(c);
  const auto sel = drive(s, c, 2.0, 1.0);
  EXPECT_EQ(sel.phase, Phase::Vision);
  EXPECT_EQ(sel.action.forward_accel, kVisionAct.forward_accel);
  EXPECT_FALSE(sel.switched);
}

TEST(SwitchRule, SwitchesToBlindWhenVisionLower) {
  ComposerConfig c;
  ComposerState s = initial_composer_state(c);
  const auto sel = drive(s, c, 0.0, 1.0);
  EXPECT_TRUE(sel.switched);
  EXPECT_EQ(sel.phase, Phase::Blind);
  EXPECT_EQ(sel.action.forward_accel, kBlindAct.forward_accel);
}

TEST(SwitchRule, DwellBlocksSwitchBackUntilPeriod) {
  ComposerConfig c;
  c.switch_period = 10;
  c.smoothing_window = 1;
  ComposerState s = initial_composer_state(c);
  drive(s, c, 0.0, 1.0);
  int back = -1;
  for (int i = 1; i <= 20 && back < 0; ++i) {
    if (drive(s, c, 5.0, 1.0).switched) back = i;
  }
  EXPECT_EQ(back, 10);
}

TEST(SwitchRule, SpeedLockHoldsPhase) {
  ComposerConfig c;
  ComposerState s = initial_composer_state(c);
  const auto sel = drive(s, c, 0.0, 1.0, c.v_lock + 0.1);
  EXPECT_EQ(sel.desired, Phase::Blind);
  EXPECT_EQ(sel.phase, Phase::Vision);
  EXPECT_FALSE(sel.switched);
}

TEST(SwitchRule, ThresholdClauseAndItsRemoval) {
  ComposerConfig c;
  c.smoothing_window = 3;
  c.alpha_threshold = 0.5;
  ComposerState s = initial_composer_state(c);
  drive(s, c, 10.0, 5.0);
  drive(s, c, 10.0, 5.0);
  // Blind drops below the window mean minus alpha.
  EXPECT_EQ(drive(s, c, 10.0, 2.0).desired, Phase::Blind);

  c.alpha_threshold.reset();
  ComposerState t = initial_composer_state(c);
  drive(t, c, 10.0, 5.0);
  drive(t, c, 10.0, 5.0);
  EXPECT_EQ(drive(t, c, 10.0, 2.0).desired, Phase::Vision);
}

TEST(SwitchRule, SmoothingUsesWindowMean) {
  ComposerConfig c;
  c.smoothing_window = 2;
  ComposerState s = initial_composer_state(c);
  drive(s, c, 4.0, 0.0);
  const auto sel = drive(s, c, 0.0, 1.0);
  EXPECT_DOUBLE_EQ(sel.smoothed_vision, 2.0);
  EXPECT_EQ(sel.desired, Phase::Vision);
  EXPECT_EQ(s.vision_window.size(), 2u);
}

TEST(Softmax, ProbabilitiesAndTemperature) {
  const std::vector<double> q{0.0, std::log(3.0)};
  const auto p = softmax_probabilities(q, 1.0);
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  EXPECT_NEAR(p[1], 0.75, 1e-15);
  const auto cold = softmax_probabilities(std::vector<double>{0.0, 1.0}, 1e-3);
  EXPECT_NEAR(cold[1], 1.0, 1e-12);
  EXPECT_THROW(softmax_probabilities(std::vector<double>{}, 1.0), std::invalid_argument);
}

TEST(Softmax, SelectionFrequency) {
  const std::vector<double> q{0.0, std::log(3.0)};
  std::mt19937_64 rng(9);
  int ones = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) ones += softmax_select(q, 1.0, rng);
  EXPECT_NEAR(static_cast<double>(ones) / n, 0.75, 0.015);
}

TEST(Validate, RejectsBadComposerConfig) {
  ComposerConfig c;
  c.switch_period = 0;
  EXPECT_THROW(validate(c), std::invalid_argument);
  c = ComposerConfig{};
  c.smoothing_window = 0;
  EXPECT_THROW(validate(c), std::invalid_argument);
}
