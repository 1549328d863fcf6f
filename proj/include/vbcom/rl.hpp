#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vbcom/artifact.hpp"
#include "vbcom/composer.hpp"
#include "vbcom/env.hpp"
#include "vbcom/mlp.hpp"
#include "vbcom/rollout.hpp"
#include "vbcom/terrain.hpp"

namespace vbcom {

enum class PolicyKind { Vision, Blind, NoisyPerceptive };

std::string to_string(PolicyKind kind);
PolicyKind policy_kind_from_string(const std::string& name);
inline bool uses_heightmap(PolicyKind kind) { return kind != PolicyKind::Blind; }

struct ApproximatorConfig {
  std::vector<int> actor_hidden{128, 64};
  std::vector<int> critic_hidden{128, 64};
  std::vector<int> velocity_hidden{128, 32};
  std::vector<int> estimator_hidden{128, 64};
  double init_log_std = -0.5;
  double output_gain = 0.01;  // final actor layer
};

void validate(const ApproximatorConfig& config);

struct PpoConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip = 0.2;
  int epochs = 4;
  int minibatches = 4;
  double entropy_coef = 0.003;
  double value_coef = 1.0;
  int horizon = 256;
  int num_envs = 64;
  double learning_rate = 1e-3;
  bool adaptive_lr = true;
  double desired_kl = 0.01;
  double early_stop_kl = 0.0;  // 0 disables the early stop
  double max_grad_norm = 1.0;
};

void validate(const PpoConfig& config);

struct TrainConfig {
  int updates = 300;
  int velocity_warmup = 50;  // updates with the actor's velocity slot zeroed
  int checkpoint_every = 50;
  int estimator_epochs = 2;
  int estimator_minibatch = 1024;
  double estimator_lr = 1e-3;
  int promote_goals = 6;
  int demote_goals = 2;
  int start_level = 0;
  int workers = 1;
};

void validate(const TrainConfig& config);

/// Everything a policy needs at runtime: actor, privileged critic, velocity estimator and the
/// return estimators (TD-lambda for deployment, Monte-Carlo for the ablation).
struct PolicyBundle {
  PolicyKind kind = PolicyKind::Vision;
  GaussianPolicy actor;
  Mlp critic;
  Mlp velocity_estimator;
  Mlp return_estimator;
  Mlp return_estimator_mc;
  bool velocity_estimate_active = true;
  CheckpointMeta meta;
};

int history_dim(const EnvConfig& config);
int actor_input_dim(PolicyKind kind);
int critic_input_dim();

PolicyBundle make_bundle(PolicyKind kind, const ApproximatorConfig& config, const EnvConfig& env, std::mt19937_64& rng);

/// [frame, velocity estimate, actor heightmap (perceptive kinds)].
Eigen::VectorXd actor_input(const Env& env, const PolicyBundle& bundle);
/// Clean frame, true velocity and the critic heightmap.
Eigen::VectorXd critic_input(const Env& env);
Eigen::VectorXd history_input(const Env& env);

/// Mean action (deterministic) or a Gaussian sample, mapped to physical units.
Action policy_action(const PolicyBundle& bundle, const Env& env, bool deterministic, std::mt19937_64& rng);

class MissingCheckpoint : public std::runtime_error {
 public:
  MissingCheckpoint(const std::string& method, const std::filesystem::path& path)
      : std::runtime_error("missing checkpoint for " + method + ": " + path.string()), method_(method) {}
  const std::string& method() const { return method_; }

 private:
  std::string method_;
};

std::filesystem::path bundle_prefix(const std::filesystem::path& dir, PolicyKind kind);
void save_bundle(const std::filesystem::path& dir, const PolicyBundle& bundle);
PolicyBundle load_bundle(const std::filesystem::path& dir, PolicyKind kind);
bool bundle_exists(const std::filesystem::path& dir, PolicyKind kind);

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(int epoch, int minibatch)
      : std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", minibatch " +
                           std::to_string(minibatch)),
        epoch_(epoch),
        minibatch_(minibatch) {}
  int epoch() const { return epoch_; }
  int minibatch() const { return minibatch_; }

 private:
  int epoch_;
  int minibatch_;
};

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double learning_rate = 0.0;
  int epochs_run = 0;
};

struct PpoOptimizers {
  Adam actor;
  Adam log_std;
  Adam critic;
};

PpoOptimizers make_optimizers(const PpoConfig& config);

/// Normalizes advantages to zero mean and unit std over the batch.
std::vector<double> normalize_advantages(std::span<const double> advantages);

/// Clipped PPO surrogate for one sample: min(r A, clip(r, 1-eps, 1+eps) A).
double clipped_surrogate(double ratio, double advantage, double clip);

struct PpoBatch {
  Eigen::MatrixXd actor_inputs;
  Eigen::MatrixXd critic_inputs;
  Eigen::MatrixXd actions;
  Eigen::VectorXd old_log_probs;
  Eigen::VectorXd advantages;  // already normalized
  Eigen::VectorXd returns;
};

/// Minibatch objective -mean(min(r A, clip(r) A)) + c_v mean((V - G)^2) - c_e H and its
/// unclipped gradients.
struct PpoLoss {
  double loss = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  Eigen::VectorXd actor_grad;
  Eigen::VectorXd log_std_grad;
  Eigen::VectorXd critic_grad;
};

PpoLoss ppo_minibatch_loss(const GaussianPolicy& actor, const Mlp& critic, const PpoBatch& batch,
                           const PpoConfig& config);

/// Clipped surrogate + value loss + entropy bonus over epochs x minibatches. Throws NonFiniteLoss
/// before touching parameters of the offending minibatch.
PpoStats ppo_update(GaussianPolicy& actor, Mlp& critic, PpoOptimizers& optimizers, const RolloutBuffer& buffer,
                    const PpoConfig& config, std::mt19937_64& rng);

/// Mean squared error regression of the next velocity from the proprio history.
double train_velocity_estimator(Mlp& estimator, Adam& adam, const Eigen::MatrixXd& histories,
                                const Eigen::MatrixXd& targets, int epochs, int minibatch, std::mt19937_64& rng);

struct CurriculumState {
  std::vector<int> levels;
  std::vector<int> promotions;
  std::vector<int> demotions;
  int max_level = 3;
  int promote_goals = 6;
  int demote_goals = 2;
};

CurriculumState make_curriculum(int num_envs, int start_level, int max_level, int promote_goals = 6,
                                int demote_goals = 2);

struct EpisodeOutcome {
  int env = 0;
  int goals = 0;
};

CurriculumState curriculum_update(CurriculumState curriculum, std::span<const EpisodeOutcome> outcomes);
double mean_level(const CurriculumState& curriculum);

struct TrainSetup {
  TerrainConfig terrain;
  EnvConfig env;
  ApproximatorConfig approximator;
  PpoConfig ppo;
  ComposerConfig composer;
  TrainConfig train;
  std::uint64_t config_hash = 0;
};

struct CurveRow {
  int update = 0;
  double mean_step_reward = 0.0;
  double mean_episode_reward = 0.0;
  double mean_goals = 0.0;
  double fall_rate = 0.0;
  double terrain_level = 0.0;
  double velocity_loss = 0.0;
  double return_loss = 0.0;
  double return_loss_mc = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double approx_kl = 0.0;
  double learning_rate = 0.0;
  int episodes = 0;
};

inline constexpr const char* kCurveHeader =
    "update,mean_step_reward,mean_episode_reward,mean_goals,fall_rate,terrain_level,velocity_loss,return_loss,"
    "return_loss_mc,policy_loss,value_loss,approx_kl,learning_rate,episodes,config_hash,seed";

std::string to_csv(const CurveRow& row);

struct TrainResult {
  PolicyBundle bundle;
  std::vector<CurveRow> curve;
  CurriculumState curriculum;
  bool halted = false;
  std::string halt_reason;
};

using ProgressFn = std::function<void(const CurveRow&)>;

/// Full training loop. When `out_dir` is non-empty, periodic checkpoints, the curve CSV and the
/// final bundle are written there.
TrainResult train_policy(PolicyKind kind, const TrainSetup& setup, std::uint64_t seed,
                         const std::filesystem::path& out_dir = {}, const ProgressFn& progress = {});

struct EstimatorFit {
  Mlp estimator;
  std::vector<double> losses;  // one entry per rollout round
};

/// Regresses a fresh return estimator on rollouts of a frozen policy. Two calls with equal
/// (bundle, setup, seed) see identical rollouts regardless of `composer` and `target`.
EstimatorFit fit_return_estimator(const PolicyBundle& bundle, const TrainSetup& setup, const ComposerConfig& composer,
                                  EstimatorTarget target, int rounds, std::uint64_t seed);

/// Noise condition for one noisy-perceptive training episode at curriculum difficulty `tl` in [0, 1].
NoiseSpec sample_training_noise(double tl, std::mt19937_64& rng);

}  // namespace vbcom
