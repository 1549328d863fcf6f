#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "vbcom/artifact.hpp"
#include "vbcom/composer.hpp"
#include "vbcom/env.hpp"
#include "vbcom/noise.hpp"
#include "vbcom/rl.hpp"
#include "vbcom/terrain.hpp"

namespace vbcom {

enum class Method { VbCom, Vision, Blind, NoisyPerceptive };

std::string to_string(Method method);
Method method_from_string(const std::string& name);

/// Composer internals for one control step.
struct ComposerTrace {
  double vision_estimate = 0.0;
  double vision_smoothed = 0.0;
  double blind_estimate = 0.0;
  double threshold = 0.0;
  Phase phase = Phase::Vision;
  bool switched = false;
};

struct ControlStep {
  Action action;
  std::optional<ComposerTrace> composer;
};

class Controller {
 public:
  virtual ~Controller() = default;
  virtual void reset(std::uint64_t seed) = 0;
  virtual ControlStep act(const Env& env) = 0;
};

using ControllerFactory = std::function<std::unique_ptr<Controller>()>;

/// Deterministic (mean-action) execution of one trained policy.
class PolicyController : public Controller {
 public:
  explicit PolicyController(std::shared_ptr<const PolicyBundle> bundle) : bundle_(std::move(bundle)) {}
  void reset(std::uint64_t seed) override { rng_.seed(seed); }
  ControlStep act(const Env& env) override;

 private:
  std::shared_ptr<const PolicyBundle> bundle_;
  std::mt19937_64 rng_;
};

struct CompositeEstimators {
  std::shared_ptr<const Mlp> vision;
  std::shared_ptr<const Mlp> blind;
};

/// Vision/blind composition. Both candidate actions are computed every step; the selector in
/// `config` picks the executed one.
class CompositeController : public Controller {
 public:
  CompositeController(std::shared_ptr<const PolicyBundle> vision, std::shared_ptr<const PolicyBundle> blind,
                      CompositeEstimators estimators, ComposerConfig config);
  void reset(std::uint64_t seed) override;
  ControlStep act(const Env& env) override;

  const ComposerState& state() const { return state_; }

 private:
  std::shared_ptr<const PolicyBundle> vision_;
  std::shared_ptr<const PolicyBundle> blind_;
  CompositeEstimators estimators_;
  ComposerConfig config_;
  ComposerState state_;
  std::mt19937_64 rng_;
};

/// Wraps a fixed action rule; used for scripted test controllers.
class ScriptedController : public Controller {
 public:
  explicit ScriptedController(std::function<Action(const Env&)> rule) : rule_(std::move(rule)) {}
  void reset(std::uint64_t) override {}
  ControlStep act(const Env& env) override { return {rule_(env), std::nullopt}; }

 private:
  std::function<Action(const Env&)> rule_;
};

struct StepRecord {
  Vec3 position;
  Vec3 velocity;
  double reward = 0.0;
  bool collision = false;
  int goal_index = 0;  // after the step
  bool fell = false;
  std::optional<ComposerTrace> composer;
};

struct Trajectory {
  TerrainProfile profile;
  std::vector<StepRecord> steps;
  bool fell = false;
};

struct EpisodeMetrics {
  double goals_completed_pct = 0.0;
  double episode_reward = 0.0;
  double average_velocity = 0.0;
  double failed = 0.0;  // 1 when the episode ended by a fall
  double collision_steps_pct = 0.0;
  std::vector<int> reach_steps;  // one entry per completed goal
  int goals = 0;
  int steps = 0;

  /// Mean over completed goals; NaN when none.
  double mean_reach_steps() const;
};

inline constexpr double kApproachZone = 2.0;  // [m] before an obstacle's leading edge

/// All metrics derive from the trajectory alone.
EpisodeMetrics compute_metrics(const Trajectory& trajectory);

struct EpisodeResult {
  Trajectory trajectory;
  EpisodeMetrics metrics;
};

EpisodeResult run_episode(Controller& controller, const TerrainProfile& profile, const NoiseSpec& noise,
                          std::uint64_t seed, const EnvConfig& env_config = {});

/// Loaded policies; any may be absent.
struct PolicySet {
  std::shared_ptr<const PolicyBundle> vision;
  std::shared_ptr<const PolicyBundle> blind;
  std::shared_ptr<const PolicyBundle> noisy;
};

/// Loads the checkpoints `methods` need. Throws MissingCheckpoint naming the method.
PolicySet load_policies(const std::filesystem::path& dir, const std::vector<Method>& methods);

/// Builds controllers for `method`; the composite uses `composer` and picks the TD-lambda or MC
/// estimators from the bundles per `composer.target`.
ControllerFactory make_factory(Method method, const PolicySet& policies, const ComposerConfig& composer);

struct SuiteConfig {
  std::vector<Method> methods{Method::VbCom, Method::Vision, Method::Blind, Method::NoisyPerceptive};
  std::vector<NoiseSpec> noise_grid;  // empty means the forward-shift grid {0, 0.3, 0.7, 1.0}
  int episodes = 10;
  int repeats = 3;
  int level = -1;  // -1 evaluates at the maximum curriculum level
  std::uint64_t seed = 0;
  int workers = 1;
};

void validate(const SuiteConfig& config);
std::vector<NoiseSpec> default_noise_grid();
std::vector<NoiseSpec> full_noise_grid();

struct MetricStat {
  double mean = 0.0;
  double std = 0.0;  // sample std over repeats (n - 1); 0 for one repeat
};

struct MetricRow {
  std::string method;
  NoiseSpec noise;
  MetricStat goals_completed_pct;
  MetricStat episode_reward;
  MetricStat average_velocity;
  MetricStat fail_rate;
  MetricStat collision_steps_pct;
  MetricStat reach_steps;
};

MetricStat mean_std(const std::vector<double>& values);

/// Aggregates per-repeat episode lists into one row.
MetricRow aggregate(const std::string& method, const NoiseSpec& noise,
                    const std::vector<std::vector<EpisodeMetrics>>& repeats);

/// Episode `episode` of repeat `repeat`: identical terrain and env seeds for every method and noise cell.
TerrainProfile suite_profile(const TerrainConfig& terrain, int level, std::uint64_t seed, int repeat, int episode);
std::uint64_t suite_episode_seed(std::uint64_t seed, int repeat, int episode);

/// One cell: `repeats` x `episodes` episodes of one controller under one noise spec.
MetricRow evaluate_cell(const std::string& method, const ControllerFactory& factory, const NoiseSpec& noise,
                        const TerrainConfig& terrain, const EnvConfig& env, const SuiteConfig& suite);

std::vector<MetricRow> run_suite(const SuiteConfig& suite, const PolicySet& policies, const TerrainConfig& terrain,
                                 const EnvConfig& env, const ComposerConfig& composer);

inline constexpr const char* kSuiteHeader =
    "noise_kind,noise_level,method,goals_completed_pct,goals_completed_pct_std,rewards,rewards_std,"
    "average_velocity,average_velocity_std,fail_rate,fail_rate_std,collision_steps_pct,collision_steps_pct_std,"
    "reach_steps,reach_steps_std,config_hash,seed";

void write_suite_csv(std::ostream& os, const std::vector<MetricRow>& rows, const ArtifactStamp& stamp);

enum class AblationKind { SwitchPeriod, Alpha, Estimator };

std::string to_string(AblationKind kind);
AblationKind ablation_kind_from_string(const std::string& name);

struct AblationConfig {
  AblationKind kind = AblationKind::Alpha;
  std::vector<int> periods{100, 50, 5, 1};
  std::vector<std::optional<double>> alphas{2.0, 0.5, 0.1, std::nullopt};
  std::vector<NoiseSpec> noise_grid;  // empty means {shift:1.0}
  int estimator_rounds = 40;          // rollout rounds when refitting estimators for a new T
  SuiteConfig suite;
};

/// Estimator pair for a switch period other than the one used in training.
CompositeEstimators refit_estimators(const PolicySet& policies, const TrainSetup& setup, const ComposerConfig& composer,
                                     int rounds, std::uint64_t seed);

std::vector<MetricRow> run_ablations(const AblationConfig& config, const PolicySet& policies, const TrainSetup& setup,
                                     const ComposerConfig& base);

inline constexpr const char* kAblationHeader =
    "setting,noise_kind,noise_level,goals_completed_pct,goals_completed_pct_std,collision_steps_pct,"
    "collision_steps_pct_std,reach_steps,reach_steps_std,config_hash,seed";

void write_ablation_csv(std::ostream& os, const std::vector<MetricRow>& rows, const ArtifactStamp& stamp);

struct TraceRow {
  int t = 0;
  double vision_estimate = 0.0;
  double vision_smoothed = 0.0;
  double blind_estimate = 0.0;
  double threshold = 0.0;
  int phase = 1;
  int goal_index = 0;
  double reward = 0.0;
  bool collision = false;
  double x = 0.0;
};

inline constexpr const char* kTraceHeader =
    "t,g_vision,g_vision_smoothed,g_blind,g_threshold,phase,goal_index,reward,collision,x,config_hash,seed";

std::vector<TraceRow> trace_episode(CompositeController& controller, const TerrainProfile& profile,
                                    const NoiseSpec& noise, std::uint64_t seed, const EnvConfig& env_config = {});

void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& rows, const ArtifactStamp& stamp);

/// Steps from the first illegal contact to the first vision-to-blind switch at or after it;
/// nullopt when either never happens.
std::optional<int> switch_latency_after_contact(const std::vector<TraceRow>& rows);

}  // namespace vbcom
