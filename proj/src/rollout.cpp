#include "vbcom/rollout.hpp"

#include <stdexcept>

namespace vbcom {

GaeResult compute_gae_segment(std::span<const double> rewards, std::span<const double> values,
                              std::span<const double> next_values, std::span<const std::uint8_t> episode_end,
                              double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || next_values.size() != n || episode_end.size() != n) {
    throw std::invalid_argument("GAE inputs must have equal lengths");
  }
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double delta = rewards[i] + gamma * next_values[i] - values[i];
    running = delta + (episode_end[i] ? 0.0 : gamma * lambda * running);
    out.advantages[i] = running;
    out.returns[i] = running + values[i];
  }
  return out;
}

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> dones, double bootstrap_value, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) throw std::invalid_argument("GAE inputs must have equal lengths");
  std::vector<double> next(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (dones[i]) {
      next[i] = 0.0;
    } else {
      next[i] = i + 1 < n ? values[i + 1] : bootstrap_value;
    }
  }
  return compute_gae_segment(rewards, values, next, dones, gamma, lambda);
}

RolloutBuffer::RolloutBuffer(int envs, int steps, int actor_dim, int critic_dim, int history_dim, int action_dim)
    : num_envs(envs), horizon(steps) {
  const int n = envs * steps;
  actor_inputs.resize(actor_dim, n);
  critic_inputs.resize(critic_dim, n);
  histories.resize(history_dim, n);
  actions.resize(action_dim, n);
  next_velocities.resize(3, n);
  log_probs.assign(n, 0.0);
  rewards.assign(n, 0.0);
  values.assign(n, 0.0);
  next_values.assign(n, 0.0);
  terminated.assign(n, 0);
  episode_end.assign(n, 0);
}

void RolloutBuffer::finalize(double gamma, double lambda) {
  advantages.assign(size(), 0.0);
  returns.assign(size(), 0.0);
  for (int e = 0; e < num_envs; ++e) {
    const std::size_t off = static_cast<std::size_t>(index(e, 0));
    const std::size_t len = static_cast<std::size_t>(horizon);
    const GaeResult g = compute_gae_segment(std::span(rewards).subspan(off, len), std::span(values).subspan(off, len),
                                            std::span(next_values).subspan(off, len),
                                            std::span(episode_end).subspan(off, len), gamma, lambda);
    for (std::size_t t = 0; t < len; ++t) {
      returns[off + t] = g.returns[t];
      // Stored as G - V so the identity A = G - V holds bit-for-bit.
      advantages[off + t] = g.returns[t] - values[off + t];
    }
  }
  finalized = true;
}

}  // namespace vbcom
