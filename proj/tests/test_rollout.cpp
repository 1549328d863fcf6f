#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "vbcom/rollout.hpp"

using namespace vbcom;

TEST(Gae, SingleStepTerminal) {
  const std::vector<double> r{1.0}, v{0.4};
  const std::vector<std::uint8_t> d{1};
  const auto g = compute_gae(r, v, d, 99.0, 0.99, 0.95);
  EXPECT_DOUBLE_EQ(g.advantages[0], 0.6);
  EXPECT_DOUBLE_EQ(g.returns[0], 1.0);
}

TEST(Gae, BootstrapsWhenNotDone) {
  const std::vector<double> r{1.0}, v{0.5};
  const std::vector<std::uint8_t> d{0};
  const auto g = compute_gae(r, v, d, 2.0, 0.5, 0.9);
  EXPECT_DOUBLE_EQ(g.advantages[0], 1.0 + 0.5 * 2.0 - 0.5);
}

TEST(Gae, LambdaOneIsDiscountedReturnMinusValue) {
  const std::vector<double> r{1.0, 2.0, 3.0}, v{0.5, 0.25, 0.125};
  const std::vector<std::uint8_t> d{0, 0, 1};
  const auto g = compute_gae(r, v, d, 0.0, 0.5, 1.0);
  EXPECT_DOUBLE_EQ(g.returns[0], 1.0 + 0.5 * 2.0 + 0.25 * 3.0);
  EXPECT_DOUBLE_EQ(g.returns[1], 2.0 + 0.5 * 3.0);
  EXPECT_DOUBLE_EQ(g.advantages[2], 3.0 - 0.125);
}

TEST(Gae, LambdaZeroIsOneStepTd) {
  const std::vector<double> r{1.0, 2.0, 3.0}, v{0.5, 0.25, 0.125};
  const std::vector<std::uint8_t> d{0, 0, 0};
  const auto g = compute_gae(r, v, d, 4.0, 0.5, 0.0);
  EXPECT_DOUBLE_EQ(g.advantages[0], 1.0 + 0.5 * 0.25 - 0.5);
  EXPECT_DOUBLE_EQ(g.advantages[1], 2.0 + 0.5 * 0.125 - 0.25);
  EXPECT_DOUBLE_EQ(g.advantages[2], 3.0 + 0.5 * 4.0 - 0.125);
}

TEST(Gae, DoneCutsTheChain) {
  const std::vector<double> r{1.0, 1.0}, v{0.0, 0.0};
  const std::vector<std::uint8_t> d{1, 0};
  const auto g = compute_gae(r, v, d, 10.0, 1.0, 1.0);
  EXPECT_DOUBLE_EQ(g.advantages[0], 1.0);
  EXPECT_DOUBLE_EQ(g.advantages[1], 11.0);
}

TEST(GaeSegment, TimeLimitBootstrapsButStopsChain) {
  const std::vector<double> r{1.0, 1.0}, v{0.0, 0.0}, next{5.0, 0.0};
  const std::vector<std::uint8_t> end{1, 1};
  const auto g = compute_gae_segment(r, v, next, end, 0.5, 1.0);
  EXPECT_DOUBLE_EQ(g.advantages[0], 1.0 + 0.5 * 5.0);
  EXPECT_DOUBLE_EQ(g.advantages[1], 1.0);
}

TEST(RolloutBuffer, LayoutAndFinalize) {
  RolloutBuffer b(2, 3, 4, 5, 6, 3);
  EXPECT_EQ(b.size(), 6);
  EXPECT_EQ(b.index(1, 2), 5);
  EXPECT_EQ(b.actor_inputs.rows(), 4);
  EXPECT_EQ(b.critic_inputs.cols(), 6);
  for (int i = 0; i < b.size(); ++i) {
    b.rewards[i] = 1.0;
    b.values[i] = 0.0;
    b.next_values[i] = 0.0;
  }
  b.episode_end[b.index(0, 2)] = 1;
  b.terminated[b.index(0, 2)] = 1;
  b.next_values[b.index(1, 2)] = 2.0;
  b.finalize(0.5, 1.0);
  ASSERT_TRUE(b.finalized);
  EXPECT_DOUBLE_EQ(b.returns[b.index(0, 0)], 1.75);
  EXPECT_DOUBLE_EQ(b.returns[b.index(1, 2)], 2.0);
  EXPECT_DOUBLE_EQ(b.returns[b.index(1, 0)], 1.0 + 0.5 + 0.25 * 2.0);
}
