#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vbcom/noise.hpp"
#include "vbcom/terrain.hpp"

namespace vbcom {

enum class Body { Torso = 0, LeadFoot = 1, TrailFoot = 2, Hand = 3 };
inline constexpr int kNumBodies = 4;

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

struct AgentState {
  Vec3 position;
  Vec3 velocity;
  double heading = 0.0;
  bool grounded = true;
  bool lead_support = true;
  bool trail_support = true;
  std::array<double, kNumBodies> contact_forces{};
  int goal_index = 0;
  int step_count = 0;
};

/// Physical command, clamped to the configured bounds before integration.
struct Action {
  double forward_accel = 0.0;  // [m/s^2]
  double lateral_accel = 0.0;  // [m/s^2]
  double jump_impulse = 0.0;   // [m/s]
};

struct RewardWeights {
  double goal_velocity = 2.0;
  double heading = 2.0;
  double collision = -15.0;
  double lin_vel_z = -1.0;
  double action_rate = -0.3;
};

struct EnvConfig {
  double dt = 0.02;
  double a_max = 4.0;
  double j_max = 3.5;
  double jump_min = 1.0;  // impulses below this do not leave the ground
  double damping = 2.0;   // ground friction [1/s]
  double air_control = 0.5;
  double gravity = 9.81;
  double goal_radius = 0.3;
  double v_c = 1.0;
  double episode_cap = 40.0;  // [s]
  double body_half_length = 0.1;
  double body_half_width = 0.2;
  double body_height = 1.0;
  double contact_threshold = 0.1;  // [N]
  double odometry_noise = 0.1;     // [m/s]
  double start_jitter = 0.05;      // [m]
  double fall_margin = 0.05;       // [m] above the gap floor
  int history_length = 5;
  bool scale_rewards_by_dt = true;
  bool project_goal_velocity = true;  // track v . d1 instead of the planar speed
  RewardWeights weights;
};

void validate(const EnvConfig& config);

struct RewardComponents {
  double goal_velocity = 0.0;
  double heading = 0.0;
  double collision = 0.0;
  double lin_vel_z = 0.0;
  double action_rate = 0.0;

  double sum() const { return goal_velocity + heading + collision + lin_vel_z + action_rate; }
};

/// Local height grid geometry in the track-aligned agent frame.
struct GridSpec {
  double forward_min;
  double lateral_min;
  int rows;
  int cols;
  double resolution;

  double forward_at(int r) const { return forward_min + resolution * (r + 0.5); }
  double lateral_at(int c) const { return lateral_min + resolution * (c + 0.5); }
};

// Forward [-0.35, 0.85] x lateral [-0.35, 0.35].
inline constexpr GridSpec kActorGrid{-0.35, -0.35, 12, 7, 0.1};
// 1.6 m along travel; 1.1 m across so that cell centres coincide with the actor grid.
inline constexpr GridSpec kCriticGrid{-0.45, -0.55, 16, 11, 0.1};

// Proprio frame layout.
inline constexpr int kCommandDim = 5;  // d1, d2, v_c
inline constexpr int kFrameDim = 20;
inline constexpr int kFrameOdometry = 5;
inline constexpr int kFrameContacts = 11;
inline constexpr int kVelocityDim = 3;
inline constexpr int kActionDim = 3;

enum class ObsMode { ActorVision, ActorBlind, Critic };

struct Observation {
  std::vector<double> commands;    // [d1, d2, v_c]
  std::vector<double> proprio;     // full frame, commands included
  HeightMap heightmap;             // empty for the blind actor
  std::vector<double> history;     // last H frames, oldest first
  std::vector<double> privileged;  // true velocity, critic only
};

struct StepInfo {
  int goals_reached = 0;  // goals captured during this step
  int goal_index = 0;
  std::array<bool, kNumBodies> collision_bodies{};
  Vec3 true_velocity;
  bool fell = false;
  bool completed = false;
};

struct Transition {
  Action action;
  double reward = 0.0;
  RewardComponents components;
  bool terminated = false;  // fall
  bool truncated = false;   // time cap or all goals reached
  StepInfo info;
};

/// Policy outputs live in [-1, 1] (jump channel uses [0, 1]); this maps them to physical units.
Action action_from_normalized(std::span<const double> u, const EnvConfig& config);
std::array<double, kActionDim> normalized_action(const Action& action, const EnvConfig& config);

Action clamp_action(const Action& action, const EnvConfig& config);

HeightMap sample_heightmap(const TerrainProfile& profile, const Vec3& position, const GridSpec& grid);

RewardComponents compute_reward(const AgentState& state, const Action& action, const Action& prev_action,
                                const TerrainProfile& profile, const EnvConfig& config);

/// Weighted reward for one step (dt-scaled when configured).
double total_reward(const RewardComponents& components, const EnvConfig& config);

struct IntegrationResult {
  AgentState state;
  bool fell = false;
};

/// One control period of the planar runner. Pure in (state, action, profile, config).
IntegrationResult integrate(const AgentState& state, const Action& action, const TerrainProfile& profile,
                            const EnvConfig& config);

/// Noise-free proprio frame; `odometry` replaces the velocity slot (true velocity when absent).
std::vector<double> proprio_frame(const AgentState& state, const TerrainProfile& profile,
                                  const std::array<double, kActionDim>& prev_action, const EnvConfig& config,
                                  const std::optional<Vec3>& odometry = std::nullopt);

/// Clean observation for `mode`; the history holds only the current frame.
Observation build_observation(const AgentState& state, const TerrainProfile& profile, ObsMode mode,
                              const EnvConfig& config);

struct PerceptionConfig {
  bool actor_map = true;    // sample the actor heightmap each step
  bool critic_map = true;   // sample the privileged critic heightmap
  bool training_noise = false;
  NoiseSpec eval_noise;
};

/// Single-threaded environment instance owning its RNG streams and perception buffers.
class Env {
 public:
  explicit Env(EnvConfig config, PerceptionConfig perception = {});

  Observation reset(const TerrainProfile& profile, std::uint64_t seed);
  Transition step(const Action& action);

  Observation observe(ObsMode mode) const;

  const AgentState& state() const { return state_; }
  const TerrainProfile& profile() const { return profile_; }
  const EnvConfig& config() const { return config_; }
  const PerceptionConfig& perception() const { return perception_; }
  void set_perception(const PerceptionConfig& perception);

  const std::vector<double>& frame() const { return history_.back(); }
  std::vector<double> history() const;
  const HeightMap& actor_heightmap() const { return actor_map_; }
  const HeightMap& clean_actor_heightmap() const { return clean_actor_map_; }
  const HeightMap& critic_heightmap() const { return critic_map_; }
  std::vector<double> critic_frame() const;
  const std::array<double, kActionDim>& prev_action() const { return prev_action_; }
  int max_steps() const;

 private:
  void refresh_observation();

  EnvConfig config_;
  PerceptionConfig perception_;
  TerrainProfile profile_;
  AgentState state_;
  Action prev_physical_action_;
  std::array<double, kActionDim> prev_action_{};
  std::mt19937_64 rng_;
  std::mt19937_64 noise_rng_;
  NoiseChannel noise_channel_;
  DelayBuffer delay_buffer_;
  std::deque<std::vector<double>> history_;
  HeightMap clean_actor_map_;
  HeightMap actor_map_;
  HeightMap critic_map_;
};

}  // namespace vbcom
