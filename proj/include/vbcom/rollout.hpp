#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace vbcom {

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;  // advantages + values
};

/// Backward GAE recursion over one trajectory segment. `dones` marks terminations
/// (bootstrap 0); the segment's last step bootstraps from `bootstrap_value` unless done.
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> dones, double bootstrap_value, double gamma, double lambda);

/// General form: `next_values[t]` is the value to bootstrap from after step t (0 after a fall,
/// V(final observation) after a time-limit cut) and `episode_end[t]` stops the lambda chain.
GaeResult compute_gae_segment(std::span<const double> rewards, std::span<const double> values,
                              std::span<const double> next_values, std::span<const std::uint8_t> episode_end,
                              double gamma, double lambda);

/// Per-step storage for `num_envs` parallel environments over `horizon` steps. Sample i of
/// environment e sits at column/index e * horizon + t so that each environment's segment is
/// contiguous.
struct RolloutBuffer {
  int num_envs = 0;
  int horizon = 0;

  Eigen::MatrixXd actor_inputs;    // actor_dim x N
  Eigen::MatrixXd critic_inputs;   // critic_dim x N
  Eigen::MatrixXd histories;       // proprio history o_{p,t-H:t}, history_dim x N
  Eigen::MatrixXd actions;         // raw Gaussian samples, action_dim x N
  Eigen::MatrixXd next_velocities; // privileged v_{t+1}, 3 x N
  std::vector<double> log_probs;
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<double> next_values;
  std::vector<std::uint8_t> terminated;
  std::vector<std::uint8_t> episode_end;

  std::vector<double> advantages;  // filled by finalize()
  std::vector<double> returns;     // G = advantages + values
  bool finalized = false;

  RolloutBuffer() = default;
  RolloutBuffer(int envs, int steps, int actor_dim, int critic_dim, int history_dim, int action_dim);

  int size() const { return num_envs * horizon; }
  int index(int env, int t) const { return env * horizon + t; }

  void finalize(double gamma, double lambda);
};

}  // namespace vbcom
