#include "vbcom/env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vbcom {

namespace {

constexpr int kSupportSamples = 5;

double clamp(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

struct Support {
  double height = 0.0;
  bool lead = true;
  bool trail = true;
};

// Highest surface under the body footprint, sampled along the travel axis.
Support support_under(const TerrainProfile& profile, double x, double y, const EnvConfig& config) {
  Support s;
  s.height = -1e9;
  for (int i = 0; i < kSupportSamples; ++i) {
    const double fx = x - config.body_half_length + 2.0 * config.body_half_length * i / (kSupportSamples - 1);
    s.height = std::max(s.height, height_at(profile, fx, y));
  }
  s.lead = height_at(profile, x + config.body_half_length, y) >= 0.0;
  s.trail = height_at(profile, x - config.body_half_length, y) >= 0.0;
  return s;
}

bool overlaps(double lo_a, double hi_a, double lo_b, double hi_b) { return lo_a < hi_b && lo_b < hi_a; }

}  // namespace

void validate(const EnvConfig& c) {
  if (c.dt <= 0.0) throw std::invalid_argument("env.dt must be > 0");
  if (c.a_max <= 0.0 || c.j_max <= 0.0) throw std::invalid_argument("env.a_max and env.j_max must be > 0");
  if (c.v_c <= 0.0 || c.v_c > 1.0) throw std::invalid_argument("env.v_c must lie in (0, 1]");
  if (c.goal_radius <= 0.0) throw std::invalid_argument("env.goal_radius must be > 0");
  if (c.episode_cap <= 0.0) throw std::invalid_argument("env.episode_cap must be > 0");
  if (c.history_length < 1) throw std::invalid_argument("env.history_length must be >= 1");
}

Action clamp_action(const Action& a, const EnvConfig& c) {
  return Action{clamp(a.forward_accel, -c.a_max, c.a_max), clamp(a.lateral_accel, -c.a_max, c.a_max),
                clamp(a.jump_impulse, 0.0, c.j_max)};
}

Action action_from_normalized(std::span<const double> u, const EnvConfig& c) {
  return clamp_action(Action{c.a_max * u[0], c.a_max * u[1], c.j_max * u[2]}, c);
}

std::array<double, kActionDim> normalized_action(const Action& a, const EnvConfig& c) {
  const Action k = clamp_action(a, c);
  return {k.forward_accel / c.a_max, k.lateral_accel / c.a_max, k.jump_impulse / c.j_max};
}

HeightMap sample_heightmap(const TerrainProfile& profile, const Vec3& p, const GridSpec& grid) {
  HeightMap map(grid.rows, grid.cols);
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      map.at(r, c) = height_at(profile, p.x + grid.forward_at(r), p.y + grid.lateral_at(c));
    }
  }
  return map;
}

RewardComponents compute_reward(const AgentState& s, const Action& action, const Action& prev_action,
                                const TerrainProfile& profile, const EnvConfig& c) {
  RewardComponents r;
  const Vec2 here{s.position.x, s.position.y};
  const Vec2 target = s.goal_index < kNumGoals ? profile.waypoints[s.goal_index] : here;
  const Vec2 d = goal_direction(target, here, s.heading);

  const double speed = c.project_goal_velocity ? std::max(0.0, s.velocity.x * d.x + s.velocity.y * d.y)
                                               : std::hypot(s.velocity.x, s.velocity.y);
  r.goal_velocity = c.weights.goal_velocity * std::min(c.v_c, speed) / c.v_c;
  r.heading = c.weights.heading * std::exp(std::cos(s.heading - std::atan2(d.y, d.x)) - 1.0);

  int touching = 0;
  for (double f : s.contact_forces) touching += f > c.contact_threshold ? 1 : 0;
  r.collision = c.weights.collision * touching;

  r.lin_vel_z = c.weights.lin_vel_z * s.velocity.z * s.velocity.z;

  const auto a = normalized_action(action, c);
  const auto b = normalized_action(prev_action, c);
  double rate = 0.0;
  for (int i = 0; i < kActionDim; ++i) rate += (a[i] - b[i]) * (a[i] - b[i]);
  r.action_rate = c.weights.action_rate * rate;
  return r;
}

double total_reward(const RewardComponents& components, const EnvConfig& c) {
  return components.sum() * (c.scale_rewards_by_dt ? c.dt : 1.0);
}

IntegrationResult integrate(const AgentState& state, const Action& raw_action, const TerrainProfile& profile,
                            const EnvConfig& c) {
  const Action a = clamp_action(raw_action, c);
  const double dt = c.dt;
  AgentState s = state;
  s.contact_forces.fill(0.0);
  s.step_count = state.step_count + 1;

  Vec3& v = s.velocity;
  Vec3& p = s.position;
  const bool below_ground = p.z < -1e-9;

  if (s.grounded) {
    if (a.jump_impulse >= c.jump_min) {
      v.z = a.jump_impulse;
      s.grounded = false;
    }
    v.x += (a.forward_accel - c.damping * v.x) * dt;
    v.y += (a.lateral_accel - c.damping * v.y) * dt;
  } else {
    v.x += c.air_control * a.forward_accel * dt;
    v.y += c.air_control * a.lateral_accel * dt;
    v.z -= c.gravity * dt;
  }
  if (below_ground) {
    // Inside a gap the walls hold the body; only the vertical fall continues.
    v.x = 0.0;
    v.y = 0.0;
  }

  const Vec3 prev = p;
  p.x += v.x * dt;
  p.y += v.y * dt;
  if (!s.grounded) p.z += v.z * dt;

  // Hurdles and walls block penetration and register contact on the touching body.
  const double hl = c.body_half_length;
  const double hw = c.body_half_width;
  for (const auto& ob : profile.obstacles) {
    if (ob.kind != ObstacleKind::Hurdle && ob.kind != ObstacleKind::Wall) continue;
    const double y_lo = ob.lateral_center - 0.5 * ob.extent_lateral;
    const double y_hi = ob.lateral_center + 0.5 * ob.extent_lateral;
    if (!overlaps(p.x - hl, p.x + hl, ob.x_start, ob.x_end())) continue;
    if (!overlaps(p.y - hw, p.y + hw, y_lo, y_hi)) continue;
    if (p.z >= ob.height) continue;

    const bool tall = ob.height - p.z > 0.6 * c.body_height;
    double force = 0.0;
    if (prev.x + hl <= ob.x_start + 1e-9) {
      force = std::max(0.0, v.x) / dt;
      p.x = ob.x_start - hl - 1e-9;
      v.x = std::min(0.0, v.x);
      if (tall) {
        s.contact_forces[static_cast<int>(Body::Torso)] += force;
        s.contact_forces[static_cast<int>(Body::Hand)] += force;
      } else {
        s.contact_forces[static_cast<int>(Body::LeadFoot)] += force;
      }
    } else if (prev.x - hl >= ob.x_end() - 1e-9) {
      force = std::max(0.0, -v.x) / dt;
      p.x = ob.x_end() + hl + 1e-9;
      v.x = std::max(0.0, v.x);
      s.contact_forces[static_cast<int>(tall ? Body::Torso : Body::TrailFoot)] += force;
    } else if (prev.y + hw <= y_lo + 1e-9) {
      force = std::max(0.0, v.y) / dt;
      p.y = y_lo - hw - 1e-9;
      v.y = std::min(0.0, v.y);
      s.contact_forces[static_cast<int>(Body::Hand)] += force;
    } else if (prev.y - hw >= y_hi - 1e-9) {
      force = std::max(0.0, -v.y) / dt;
      p.y = y_hi + hw + 1e-9;
      v.y = std::max(0.0, v.y);
      s.contact_forces[static_cast<int>(Body::Hand)] += force;
    } else {
      // Dropped into the obstacle volume from above its top: rest on it.
      p.z = ob.height;
    }
  }

  const Support sup = support_under(profile, p.x, p.y, c);
  s.lead_support = sup.lead && p.z >= -1e-9;
  s.trail_support = sup.trail && p.z >= -1e-9;
  if (s.grounded) {
    if (sup.height < p.z - 1e-9) {
      s.grounded = false;  // walked off an edge
      v.z = 0.0;
    }
  } else if (p.z <= sup.height && prev.z >= sup.height - 1e-9) {
    p.z = sup.height;
    v.z = 0.0;
    s.grounded = sup.height >= 0.0;
  }

  IntegrationResult out;
  if (sup.height < 0.0 && p.z <= sup.height + c.fall_margin) out.fell = true;
  if (std::abs(p.y) > profile.half_width) out.fell = true;

  const double speed = std::hypot(v.x, v.y);
  if (speed > 0.1) s.heading = std::atan2(v.y, v.x);

  if (s.goal_index < kNumGoals) {
    const Vec2& w = profile.waypoints[s.goal_index];
    if (std::hypot(p.x - w.x, p.y - w.y) < c.goal_radius) ++s.goal_index;
  }
  out.state = s;
  return out;
}

std::vector<double> proprio_frame(const AgentState& s, const TerrainProfile& profile,
                                  const std::array<double, kActionDim>& prev_action, const EnvConfig& c,
                                  const std::optional<Vec3>& odometry) {
  std::vector<double> f(kFrameDim, 0.0);
  const Vec2 here{s.position.x, s.position.y};
  const Vec2 heading_dir{std::cos(s.heading), std::sin(s.heading)};
  Vec2 d1 = heading_dir;
  Vec2 d2 = heading_dir;
  if (s.goal_index < kNumGoals) {
    d1 = goal_direction(profile.waypoints[s.goal_index], here, s.heading);
    d2 = s.goal_index + 1 < kNumGoals ? goal_direction(profile.waypoints[s.goal_index + 1], here, s.heading) : d1;
  }
  f[0] = d1.x;
  f[1] = d1.y;
  f[2] = d2.x;
  f[3] = d2.y;
  f[4] = c.v_c;
  const Vec3 vel = odometry.value_or(s.velocity);
  f[5] = vel.x;
  f[6] = vel.y;
  f[7] = vel.z;
  f[8] = std::cos(s.heading);
  f[9] = std::sin(s.heading);
  f[10] = s.grounded ? 1.0 : 0.0;
  for (int b = 0; b < kNumBodies; ++b) f[kFrameContacts + b] = s.contact_forces[b] > c.contact_threshold ? 1.0 : 0.0;
  f[15] = s.lead_support ? 1.0 : 0.0;
  f[16] = s.trail_support ? 1.0 : 0.0;
  for (int i = 0; i < kActionDim; ++i) f[17 + i] = prev_action[i];
  return f;
}

Observation build_observation(const AgentState& s, const TerrainProfile& profile, ObsMode mode,
                              const EnvConfig& c) {
  Observation o;
  o.proprio = proprio_frame(s, profile, {0.0, 0.0, 0.0}, c);
  o.commands.assign(o.proprio.begin(), o.proprio.begin() + kCommandDim);
  o.history = o.proprio;
  switch (mode) {
    case ObsMode::ActorVision: o.heightmap = sample_heightmap(profile, s.position, kActorGrid); break;
    case ObsMode::ActorBlind: break;
    case ObsMode::Critic:
      o.heightmap = sample_heightmap(profile, s.position, kCriticGrid);
      o.privileged = {s.velocity.x, s.velocity.y, s.velocity.z};
      break;
  }
  return o;
}

Env::Env(EnvConfig config, PerceptionConfig perception)
    : config_(config), perception_(perception), delay_buffer_(config.dt) {
  validate(config_);
}

void Env::set_perception(const PerceptionConfig& perception) {
  perception_ = perception;
  noise_channel_ = NoiseChannel(perception_.eval_noise, profile_.seed);
}

int Env::max_steps() const { return static_cast<int>(std::llround(config_.episode_cap / config_.dt)); }

Observation Env::reset(const TerrainProfile& profile, std::uint64_t seed) {
  profile_ = profile;
  rng_.seed(seed);
  noise_rng_.seed(seed ^ 0x9E3779B97F4A7C15ULL);
  noise_channel_ = NoiseChannel(perception_.eval_noise, seed);
  std::uniform_real_distribution<double> jitter(-config_.start_jitter, config_.start_jitter);

  state_ = AgentState{};
  state_.position = Vec3{jitter(rng_), jitter(rng_), 0.0};
  state_.heading = jitter(rng_);
  prev_physical_action_ = Action{};
  prev_action_ = {0.0, 0.0, 0.0};
  delay_buffer_.clear();
  history_.clear();
  refresh_observation();
  while (static_cast<int>(history_.size()) < config_.history_length) history_.push_front(history_.front());
  return observe(perception_.actor_map ? ObsMode::ActorVision : ObsMode::ActorBlind);
}

void Env::refresh_observation() {
  std::normal_distribution<double> odo(0.0, config_.odometry_noise);
  const Vec3 measured{state_.velocity.x + odo(rng_), state_.velocity.y + odo(rng_), state_.velocity.z + odo(rng_)};
  history_.push_back(proprio_frame(state_, profile_, prev_action_, config_, measured));
  while (static_cast<int>(history_.size()) > config_.history_length) history_.pop_front();

  if (perception_.actor_map) {
    clean_actor_map_ = sample_heightmap(profile_, state_.position, kActorGrid);
    delay_buffer_.push(clean_actor_map_);
    HeightMap m = training_noise_pipeline(clean_actor_map_, delay_buffer_, noise_rng_, perception_.training_noise);
    if (perception_.eval_noise.kind != NoiseKind::None) m = noise_channel_.apply(m, delay_buffer_, noise_rng_);
    actor_map_ = std::move(m);
  }
  if (perception_.critic_map) critic_map_ = sample_heightmap(profile_, state_.position, kCriticGrid);
}

Transition Env::step(const Action& action) {
  Transition t;
  t.action = clamp_action(action, config_);
  const int goal_before = state_.goal_index;
  const IntegrationResult res = integrate(state_, t.action, profile_, config_);
  state_ = res.state;

  t.components = compute_reward(state_, t.action, prev_physical_action_, profile_, config_);
  t.reward = total_reward(t.components, config_);
  prev_physical_action_ = t.action;
  prev_action_ = normalized_action(t.action, config_);

  t.info.goal_index = state_.goal_index;
  t.info.goals_reached = state_.goal_index - goal_before;
  for (int b = 0; b < kNumBodies; ++b) t.info.collision_bodies[b] = state_.contact_forces[b] > config_.contact_threshold;
  t.info.true_velocity = state_.velocity;
  t.info.fell = res.fell;
  t.info.completed = state_.goal_index >= kNumGoals;

  t.terminated = res.fell;
  t.truncated = !t.terminated && (t.info.completed || state_.step_count >= max_steps());
  refresh_observation();
  return t;
}

std::vector<double> Env::history() const {
  std::vector<double> h;
  h.reserve(history_.size() * kFrameDim);
  for (const auto& f : history_) h.insert(h.end(), f.begin(), f.end());
  return h;
}

std::vector<double> Env::critic_frame() const { return proprio_frame(state_, profile_, prev_action_, config_); }

Observation Env::observe(ObsMode mode) const {
  Observation o;
  if (mode == ObsMode::Critic) {
    o.proprio = critic_frame();
    o.heightmap = critic_map_;
    o.privileged = {state_.velocity.x, state_.velocity.y, state_.velocity.z};
  } else {
    o.proprio = frame();
    if (mode == ObsMode::ActorVision) o.heightmap = actor_map_;
  }
  o.commands.assign(o.proprio.begin(), o.proprio.begin() + kCommandDim);
  o.history = history();
  return o;
}

}  // namespace vbcom
