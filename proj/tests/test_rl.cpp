#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include <gtest/gtest.h>

#include "vbcom/rl.hpp"

using namespace vbcom;

namespace {

TrainSetup tiny_setup() {
  TrainSetup s;
  s.ppo.num_envs = 4;
  s.ppo.horizon = 32;
  s.ppo.epochs = 2;
  s.ppo.minibatches = 2;
  s.train.updates = 2;
  s.train.velocity_warmup = 1;
  s.train.checkpoint_every = 1;
  s.train.estimator_minibatch = 32;
  s.approximator.actor_hidden = {16};
  s.approximator.critic_hidden = {16};
  s.approximator.velocity_hidden = {16};
  s.approximator.estimator_hidden = {16};
  s.composer.switch_period = 5;
  s.config_hash = 0x1234;
  return s;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("vbcom_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Kinds, NamesRoundTrip) {
  for (PolicyKind k : {PolicyKind::Vision, PolicyKind::Blind, PolicyKind::NoisyPerceptive}) {
    EXPECT_EQ(policy_kind_from_string(to_string(k)), k);
  }
  EXPECT_ANY_THROW(policy_kind_from_string("bogus"));
  EXPECT_FALSE(uses_heightmap(PolicyKind::Blind));
  EXPECT_TRUE(uses_heightmap(PolicyKind::NoisyPerceptive));
}

TEST(Bundle, ShapesFollowObservationLayout) {
  std::mt19937_64 rng(1);
  EnvConfig env;
  const auto vis = make_bundle(PolicyKind::Vision, ApproximatorConfig{}, env, rng);
  EXPECT_EQ(vis.actor.mean.input_dim(), kFrameDim + kVelocityDim + 84);
  EXPECT_EQ(vis.actor.mean.output_dim(), kActionDim);
  EXPECT_EQ(vis.critic.input_dim(), critic_input_dim());
  EXPECT_EQ(vis.velocity_estimator.input_dim(), history_dim(env));
  EXPECT_EQ(vis.velocity_estimator.output_dim(), kVelocityDim);
  EXPECT_EQ(vis.return_estimator.input_dim(), history_dim(env));
  EXPECT_EQ(vis.return_estimator.output_dim(), 1);
  const auto blind = make_bundle(PolicyKind::Blind, ApproximatorConfig{}, env, rng);
  EXPECT_EQ(blind.actor.mean.input_dim(), kFrameDim + kVelocityDim);
}

TEST(Bundle, InputsMatchEnvironment) {
  std::mt19937_64 rng(2);
  EnvConfig ec;
  TerrainConfig tc;
  Env env(ec);
  env.reset(generate_profile(tc, 1, 3), 4);
  const auto b = make_bundle(PolicyKind::Vision, ApproximatorConfig{}, ec, rng);
  EXPECT_EQ(actor_input(env, b).size(), b.actor.mean.input_dim());
  EXPECT_EQ(critic_input(env).size(), critic_input_dim());
  EXPECT_EQ(history_input(env).size(), history_dim(ec));
  const Action a = policy_action(b, env, true, rng);
  EXPECT_LE(std::abs(a.forward_accel), ec.a_max);
  EXPECT_GE(a.jump_impulse, 0.0);
}

TEST(Bundle, SaveLoadAndMissing) {
  const auto dir = scratch("bundle");
  std::mt19937_64 rng(3);
  EnvConfig ec;
  auto b = make_bundle(PolicyKind::Blind, ApproximatorConfig{}, ec, rng);
  b.meta = {77, 5};
  EXPECT_FALSE(bundle_exists(dir, PolicyKind::Blind));
  save_bundle(dir, b);
  EXPECT_TRUE(bundle_exists(dir, PolicyKind::Blind));
  const auto c = load_bundle(dir, PolicyKind::Blind);
  EXPECT_EQ(c.meta.config_hash, 77u);
  EXPECT_EQ(c.actor.mean.layer_sizes(), b.actor.mean.layer_sizes());
  try {
    load_bundle(dir, PolicyKind::Vision);
    FAIL() << "expected MissingCheckpoint";
  } catch (const MissingCheckpoint& e) {
    EXPECT_EQ(e.method(), "vision");
  }
  std::filesystem::remove_all(dir);
}

TEST(Ppo, AdvantageNormalization) {
  const std::vector<double> a{1.0, 2.0, 3.0, 4.0};
  const auto n = normalize_advantages(a);
  double mean = 0.0, sq = 0.0;
  for (double v : n) mean += v / 4.0;
  for (double v : n) sq += (v - mean) * (v - mean) / 4.0;
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_NEAR(sq, 1.0, 1e-6);
}

TEST(Ppo, ClippedSurrogate) {
  EXPECT_DOUBLE_EQ(clipped_surrogate(1.5, 1.0, 0.2), 1.2);
  EXPECT_DOUBLE_EQ(clipped_surrogate(0.5, 1.0, 0.2), 0.5);
  EXPECT_DOUBLE_EQ(clipped_surrogate(0.5, -1.0, 0.2), -0.8);
  EXPECT_DOUBLE_EQ(clipped_surrogate(1.5, -1.0, 0.2), -1.5);
}

TEST(Ppo, LossAtOldPolicyHasNoClipping) {
  std::mt19937_64 rng(4);
  EnvConfig ec;
  const auto b = make_bundle(PolicyKind::Blind, ApproximatorConfig{}, ec, rng);
  const int n = 16;
  PpoBatch batch;
  batch.actor_inputs = Eigen::MatrixXd::Random(b.actor.mean.input_dim(), n);
  batch.critic_inputs = Eigen::MatrixXd::Random(critic_input_dim(), n);
  const Eigen::MatrixXd mean = b.actor.mean.forward(batch.actor_inputs, nullptr);
  batch.actions = mean + 0.1 * Eigen::MatrixXd::Random(kActionDim, n);
  batch.old_log_probs.resize(n);
  for (int i = 0; i < n; ++i) {
    batch.old_log_probs[i] =
        gaussian_log_prob(batch.actions.col(i), mean.col(i), b.actor.clamped_log_std());
  }
  batch.advantages = Eigen::VectorXd::Random(n);
  batch.returns = Eigen::VectorXd::Random(n);
  const auto loss = ppo_minibatch_loss(b.actor, b.critic, batch, PpoConfig{});
  EXPECT_NEAR(loss.approx_kl, 0.0, 1e-12);
  EXPECT_EQ(loss.clip_fraction, 0.0);
  EXPECT_NEAR(loss.policy_loss, -batch.advantages.mean(), 1e-12);
  EXPECT_NEAR(loss.entropy, gaussian_entropy(b.actor.clamped_log_std()), 1e-12);
  EXPECT_EQ(loss.actor_grad.size(), b.actor.mean.num_params());
}

TEST(Curriculum, PromoteDemoteAndClamp) {
  auto c = make_curriculum(3, 0, 2);
  const std::vector<EpisodeOutcome> up{{0, 8}, {1, 4}, {2, 0}};
  c = curriculum_update(c, up);
  EXPECT_EQ(c.levels, (std::vector<int>{1, 0, 0}));
  EXPECT_EQ(c.demotions[2], 0);
  c = curriculum_update(c, std::vector<EpisodeOutcome>{{0, 8}, {0, 8}, {0, 8}});
  EXPECT_EQ(c.levels[0], 2);
  EXPECT_EQ(c.promotions[0], 2);
  c = curriculum_update(c, std::vector<EpisodeOutcome>{{0, 1}});
  EXPECT_EQ(c.levels[0], 1);
  EXPECT_NEAR(mean_level(c), 1.0 / 3.0, 1e-15);
}

TEST(NoisyTraining, LevelBoundedByDifficulty) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 500; ++i) {
    const NoiseSpec s = sample_training_noise(0.4, rng);
    EXPECT_GE(s.level, 0.0);
    EXPECT_LE(s.level, 0.4);
    EXPECT_NE(s.kind, NoiseKind::Delay);
    EXPECT_NE(s.kind, NoiseKind::None);
  }
  EXPECT_EQ(sample_training_noise(0.0, rng).level, 0.0);
}

TEST(Validate, RejectsBadConfigs) {
  PpoConfig p;
  p.clip = -0.1;
  EXPECT_THROW(validate(p), std::invalid_argument);
  TrainConfig t;
  t.promote_goals = t.demote_goals;
  EXPECT_THROW(validate(t), std::invalid_argument);
  ApproximatorConfig a;
  a.init_log_std = 2.0;
  EXPECT_THROW(validate(a), std::invalid_argument);
}

TEST(Training, SmokeRunWritesArtifacts) {
  const auto dir = scratch("train");
  const TrainSetup s = tiny_setup();
  int rows = 0;
  const auto res = train_policy(PolicyKind::Vision, s, 11, dir, [&](const CurveRow&) { ++rows; });
  EXPECT_FALSE(res.halted) << res.halt_reason;
  EXPECT_EQ(res.curve.size(), 2u);
  EXPECT_EQ(rows, 2);
  EXPECT_TRUE(bundle_exists(dir, PolicyKind::Vision));
  EXPECT_EQ(res.bundle.meta.config_hash, 0x1234u);
  EXPECT_EQ(res.bundle.meta.seed, 11u);
  bool curve_found = false;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".csv") continue;
    std::ifstream in(entry.path());
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, kCurveHeader);
    std::string line;
    std::getline(in, line);
    EXPECT_NE(line.find(",0000000000001234,11"), std::string::npos) << line;
    curve_found = true;
  }
  EXPECT_TRUE(curve_found);
  std::filesystem::remove_all(dir);
}

TEST(Training, DeterministicUnderSeed) {
  const TrainSetup s = tiny_setup();
  const auto a = train_policy(PolicyKind::Blind, s, 3);
  const auto b = train_policy(PolicyKind::Blind, s, 3);
  EXPECT_EQ(a.bundle.actor.mean.params(), b.bundle.actor.mean.params());
  EXPECT_EQ(a.curve.back().mean_step_reward, b.curve.back().mean_step_reward);
}

TEST(EstimatorFit, SameRolloutsForBothTargets) {
  TrainSetup s = tiny_setup();
  std::mt19937_64 rng(6);
  const auto b = make_bundle(PolicyKind::Blind, s.approximator, s.env, rng);
  const auto td = fit_return_estimator(b, s, s.composer, EstimatorTarget::TdLambda, 2, 9);
  const auto td2 = fit_return_estimator(b, s, s.composer, EstimatorTarget::TdLambda, 2, 9);
  const auto mc = fit_return_estimator(b, s, s.composer, EstimatorTarget::MonteCarlo, 2, 9);
  EXPECT_EQ(td.losses, td2.losses);
  EXPECT_EQ(td.losses.size(), 2u);
  EXPECT_EQ(mc.losses.size(), 2u);
  for (double l : mc.losses) EXPECT_TRUE(std::isfinite(l));
}
