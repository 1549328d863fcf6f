#include <cmath>

#include <gtest/gtest.h>

#include "vbcom/env.hpp"

using namespace vbcom;

namespace {

TerrainProfile flat_profile() {
  TerrainProfile p;
  p.track_length = 40.0;
  p.half_width = 2.0;
  for (int i = 0; i < kNumGoals; ++i) p.waypoints[i] = Vec2{4.0 * (i + 1), 0.0};
  return p;
}

TerrainProfile single(const ObstacleSpec& ob) {
  TerrainProfile p = flat_profile();
  p.obstacles.push_back(ob);
  return p;
}

}  // namespace

TEST(Actions, ClampAndNormalize) {
  EnvConfig c;
  const Action a = clamp_action(Action{10.0, -10.0, -1.0}, c);
  EXPECT_EQ(a.forward_accel, c.a_max);
  EXPECT_EQ(a.lateral_accel, -c.a_max);
  EXPECT_EQ(a.jump_impulse, 0.0);
  const std::array<double, 3> u{0.5, -0.25, 1.0};
  const auto back = normalized_action(action_from_normalized(u, c), c);
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(back[i], u[i]);
}

TEST(Reward, StandingStillFacingGoal) {
  EnvConfig c;
  AgentState s;
  const auto r = compute_reward(s, Action{}, Action{}, flat_profile(), c);
  EXPECT_EQ(r.goal_velocity, 0.0);
  EXPECT_DOUBLE_EQ(r.heading, c.weights.heading);
  EXPECT_EQ(r.collision, 0.0);
  EXPECT_EQ(r.action_rate, 0.0);
}

TEST(Reward, GoalVelocitySaturatesAtCommand) {
  EnvConfig c;
  AgentState s;
  s.velocity = Vec3{0.5, 0.0, 0.0};
  EXPECT_DOUBLE_EQ(compute_reward(s, {}, {}, flat_profile(), c).goal_velocity, 0.5 * c.weights.goal_velocity);
  s.velocity = Vec3{3.0, 0.0, 0.0};
  EXPECT_DOUBLE_EQ(compute_reward(s, {}, {}, flat_profile(), c).goal_velocity, c.weights.goal_velocity);
}

TEST(Reward, ProjectedSpeedIgnoresSidewaysMotion) {
  EnvConfig c;
  AgentState s;
  s.velocity = Vec3{0.0, 0.8, 0.0};
  EXPECT_EQ(compute_reward(s, {}, {}, flat_profile(), c).goal_velocity, 0.0);
  s.velocity = Vec3{-0.8, 0.0, 0.0};
  EXPECT_EQ(compute_reward(s, {}, {}, flat_profile(), c).goal_velocity, 0.0);
  c.project_goal_velocity = false;
  s.velocity = Vec3{0.0, 0.8, 0.0};
  EXPECT_DOUBLE_EQ(compute_reward(s, {}, {}, flat_profile(), c).goal_velocity, 0.8 * c.weights.goal_velocity);
}

TEST(Reward, CollisionCountsBodies) {
  EnvConfig c;
  AgentState s;
  s.contact_forces = {5.0, 0.0, 0.05, 5.0};
  EXPECT_DOUBLE_EQ(compute_reward(s, {}, {}, flat_profile(), c).collision, 2.0 * c.weights.collision);
}

TEST(Reward, ActionRateUsesNormalizedUnits) {
  EnvConfig c;
  AgentState s;
  const auto r = compute_reward(s, Action{c.a_max, 0.0, 0.0}, Action{}, flat_profile(), c);
  EXPECT_DOUBLE_EQ(r.action_rate, c.weights.action_rate);
}

TEST(Reward, DtScaling) {
  EnvConfig c;
  RewardComponents r;
  r.heading = 2.0;
  EXPECT_DOUBLE_EQ(total_reward(r, c), 2.0 * c.dt);
  c.scale_rewards_by_dt = false;
  EXPECT_DOUBLE_EQ(total_reward(r, c), 2.0);
}

TEST(Integrate, AcceleratesOnFlatGround) {
  EnvConfig c;
  AgentState s;
  const auto res = integrate(s, Action{c.a_max, 0.0, 0.0}, flat_profile(), c);
  EXPECT_DOUBLE_EQ(res.state.velocity.x, c.a_max * c.dt);
  EXPECT_GT(res.state.position.x, 0.0);
  EXPECT_TRUE(res.state.grounded);
  EXPECT_FALSE(res.fell);
  EXPECT_EQ(res.state.step_count, 1);
}

TEST(Integrate, SteadyStateSpeedFromDamping) {
  EnvConfig c;
  AgentState s;
  for (int i = 0; i < 2000; ++i) s = integrate(s, Action{1.0, 0.0, 0.0}, flat_profile(), c).state;
  EXPECT_NEAR(s.velocity.x, 1.0 / c.damping, 1e-6);
}

TEST(Integrate, JumpIsBallistic) {
  EnvConfig c;
  AgentState s;
  s = integrate(s, Action{0.0, 0.0, 3.0}, flat_profile(), c).state;
  EXPECT_FALSE(s.grounded);
  int steps = 1;
  while (!s.grounded && steps < 1000) {
    s = integrate(s, Action{}, flat_profile(), c).state;
    ++steps;
  }
  EXPECT_TRUE(s.grounded);
  EXPECT_EQ(s.position.z, 0.0);
  EXPECT_NEAR(steps * c.dt, 2.0 * 3.0 / c.gravity, 3 * c.dt);
}

TEST(Integrate, WeakImpulseStaysGrounded) {
  EnvConfig c;
  AgentState s;
  s = integrate(s, Action{0.0, 0.0, 0.5 * c.jump_min}, flat_profile(), c).state;
  EXPECT_TRUE(s.grounded);
  EXPECT_EQ(s.velocity.z, 0.0);
}

TEST(Integrate, HurdleBlocksAndRegistersFootContact) {
  EnvConfig c;
  const auto p = single({ObstacleKind::Hurdle, 0.5, 0.15, 4.0, 0.3, 0.0});
  AgentState s;
  s.velocity.x = 1.5;
  bool touched = false;
  for (int i = 0; i < 100; ++i) {
    s = integrate(s, Action{c.a_max, 0.0, 0.0}, p, c).state;
    EXPECT_LE(s.position.x + c.body_half_length, 0.5);
    if (s.contact_forces[static_cast<int>(Body::LeadFoot)] > c.contact_threshold) touched = true;
  }
  EXPECT_TRUE(touched);
}

TEST(Integrate, WallContactsTorso) {
  EnvConfig c;
  const auto p = single({ObstacleKind::Wall, 0.5, 0.2, 4.0, 1.2, 0.0});
  AgentState s;
  s.velocity.x = 1.0;
  bool torso = false;
  for (int i = 0; i < 50; ++i) {
    s = integrate(s, Action{c.a_max, 0.0, 0.0}, p, c).state;
    torso = torso || s.contact_forces[static_cast<int>(Body::Torso)] > c.contact_threshold;
  }
  EXPECT_TRUE(torso);
}

TEST(Integrate, WalkingIntoGapFalls) {
  EnvConfig c;
  const auto p = single({ObstacleKind::Gap, 0.5, 0.7, 4.0, -1.6, 0.0});
  AgentState s;
  s.velocity.x = 1.0;
  bool fell = false;
  for (int i = 0; i < 200 && !fell; ++i) {
    const auto res = integrate(s, Action{c.a_max, 0.0, 0.0}, p, c);
    s = res.state;
    fell = res.fell;
  }
  EXPECT_TRUE(fell);
}

TEST(Integrate, LeavingTrackSidewaysFalls) {
  EnvConfig c;
  AgentState s;
  s.position.y = 1.99;
  s.velocity.y = 1.0;
  EXPECT_TRUE(integrate(s, Action{}, flat_profile(), c).fell);
}

TEST(Integrate, GoalCapture) {
  EnvConfig c;
  AgentState s;
  s.position = Vec3{3.9, 0.0, 0.0};
  const auto res = integrate(s, Action{}, flat_profile(), c);
  EXPECT_EQ(res.state.goal_index, 1);
}

TEST(Integrate, Pure) {
  EnvConfig c;
  const auto p = single({ObstacleKind::Hurdle, 0.5, 0.15, 4.0, 0.3, 0.0});
  AgentState s;
  s.velocity = Vec3{1.0, 0.2, 0.0};
  const auto a = integrate(s, Action{1.0, 0.5, 0.0}, p, c);
  const auto b = integrate(s, Action{1.0, 0.5, 0.0}, p, c);
  EXPECT_EQ(a.state.position.x, b.state.position.x);
  EXPECT_EQ(a.state.velocity.y, b.state.velocity.y);
}

TEST(Observation, FrameLayout) {
  EnvConfig c;
  AgentState s;
  s.velocity = Vec3{0.3, -0.1, 0.0};
  const auto f = proprio_frame(s, flat_profile(), {0.1, 0.2, 0.3}, c);
  ASSERT_EQ(f.size(), static_cast<std::size_t>(kFrameDim));
  EXPECT_DOUBLE_EQ(f[0], 1.0);
  EXPECT_DOUBLE_EQ(f[2], 1.0);
  EXPECT_DOUBLE_EQ(f[4], c.v_c);
  EXPECT_DOUBLE_EQ(f[kFrameOdometry], 0.3);
  EXPECT_DOUBLE_EQ(f[kFrameOdometry + 1], -0.1);
  EXPECT_DOUBLE_EQ(f[10], 1.0);
  EXPECT_DOUBLE_EQ(f[19], 0.3);
}

TEST(Observation, ModesAndShapes) {
  EnvConfig c;
  AgentState s;
  const auto p = flat_profile();
  const auto vis = build_observation(s, p, ObsMode::ActorVision, c);
  EXPECT_EQ(vis.heightmap.rows, kActorGrid.rows);
  EXPECT_EQ(vis.heightmap.cols, kActorGrid.cols);
  EXPECT_TRUE(vis.privileged.empty());
  const auto blind = build_observation(s, p, ObsMode::ActorBlind, c);
  EXPECT_EQ(blind.heightmap.size(), 0u);
  const auto critic = build_observation(s, p, ObsMode::Critic, c);
  EXPECT_EQ(critic.heightmap.rows, kCriticGrid.rows);
  EXPECT_EQ(critic.privileged.size(), 3u);
  EXPECT_EQ(vis.commands.size(), static_cast<std::size_t>(kCommandDim));
}

TEST(Observation, CriticGridContainsActorCentres) {
  for (int r = 0; r < kActorGrid.rows; ++r) {
    const double f = kActorGrid.forward_at(r);
    bool found = false;
    for (int k = 0; k < kCriticGrid.rows; ++k) found = found || std::abs(kCriticGrid.forward_at(k) - f) < 1e-12;
    EXPECT_TRUE(found);
  }
  for (int c = 0; c < kActorGrid.cols; ++c) {
    const double l = kActorGrid.lateral_at(c);
    bool found = false;
    for (int k = 0; k < kCriticGrid.cols; ++k) found = found || std::abs(kCriticGrid.lateral_at(k) - l) < 1e-12;
    EXPECT_TRUE(found);
  }
}

TEST(Observation, HeightmapSeesGapAhead) {
  const auto p = single({ObstacleKind::Gap, 0.5, 0.7, 4.0, -1.6, 0.0});
  const auto m = sample_heightmap(p, Vec3{}, kActorGrid);
  EXPECT_EQ(m.at(0, 3), 0.0);
  EXPECT_EQ(m.at(kActorGrid.rows - 1, 3), -1.6);
}

TEST(EnvInstance, ResetFillsHistory) {
  EnvConfig c;
  Env env(c);
  env.reset(flat_profile(), 3);
  EXPECT_EQ(env.history().size(), static_cast<std::size_t>(c.history_length * kFrameDim));
  EXPECT_EQ(env.actor_heightmap().rows, kActorGrid.rows);
  EXPECT_EQ(env.max_steps(), 2000);
}

TEST(EnvInstance, DeterministicUnderSeed) {
  EnvConfig c;
  TerrainConfig tc;
  const auto p = generate_profile(tc, 2, 4);
  PerceptionConfig pc;
  pc.training_noise = true;
  Env a(c, pc), b(c, pc);
  a.reset(p, 9);
  b.reset(p, 9);
  for (int i = 0; i < 50; ++i) {
    const Action act{2.0, 0.1 * (i % 3), i % 20 == 0 ? 2.0 : 0.0};
    const auto ta = a.step(act);
    const auto tb = b.step(act);
    EXPECT_EQ(ta.reward, tb.reward);
    if (ta.terminated || ta.truncated) break;
  }
  EXPECT_EQ(a.history(), b.history());
  EXPECT_EQ(a.actor_heightmap(), b.actor_heightmap());
}

TEST(EnvInstance, TimeCapTruncates) {
  EnvConfig c;
  c.episode_cap = 0.1;
  Env env(c);
  env.reset(flat_profile(), 1);
  Transition t;
  int steps = 0;
  do {
    t = env.step(Action{});
    ++steps;
  } while (!t.truncated && !t.terminated);
  EXPECT_TRUE(t.truncated);
  EXPECT_FALSE(t.terminated);
  EXPECT_EQ(steps, 5);
}

TEST(EnvInstance, EvalNoiseCorruptsActorMapOnly) {
  EnvConfig c;
  PerceptionConfig pc;
  pc.eval_noise = parse_noise_spec("shift:1.0");
  Env env(c, pc);
  const auto p = single({ObstacleKind::Gap, 0.5, 0.7, 4.0, -1.6, 0.0});
  env.reset(p, 2);
  EXPECT_NE(env.actor_heightmap(), env.clean_actor_heightmap());
  EXPECT_EQ(env.critic_heightmap(), sample_heightmap(p, env.state().position, kCriticGrid));
}

TEST(Validate, RejectsBadConfig) {
  EnvConfig c;
  c.dt = 0.0;
  EXPECT_THROW(validate(c), std::invalid_argument);
}
