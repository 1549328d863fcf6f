#include "vbcom/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "vbcom/composer.hpp"
#include "vbcom/eval.hpp"
#include "vbcom/mlp.hpp"
#include "vbcom/noise.hpp"
#include "vbcom/rl.hpp"
#include "vbcom/rollout.hpp"

namespace vbcom::oracles {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

Check make(const std::string& name, bool pass, const std::string& detail) { return {name, pass, detail}; }

}  // namespace

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
}

Check lambda_return(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> g_dist(-10.0, 10.0);
  std::uniform_int_distribution<int> len_dist(1, 200);
  std::uniform_int_distribution<int> t_dist(1, 100);
  std::uniform_real_distribution<double> l_dist(0.0, 1.0);
  double worst = 0.0;
  for (int c = 0; c < kLambdaReturnCases; ++c) {
    const int n = len_dist(rng);
    const int period = t_dist(rng);
    double lambda = l_dist(rng);
    while (lambda <= 0.0) lambda = l_dist(rng);
    std::vector<double> g(n);
    for (double& x : g) x = g_dist(rng);
    const std::vector<double> got = lambda_return_targets(g, period, lambda);
    for (int t = 0; t < n; ++t) {
      long double ref = 0.0L;
      for (int k = 0; k <= period && t + k < n; ++k) {
        ref += (1.0L - lambda) * std::pow(static_cast<long double>(lambda), k) * g[t + k];
      }
      worst = std::max(worst, static_cast<double>(std::fabs(ref - got[t])));
    }
  }
  return make("lambda-return", worst <= kLambdaReturnTol,
              std::to_string(kLambdaReturnCases) + " cases, max |delta| " + fmt(worst));
}

Check gae(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::uniform_int_distribution<int> len_dist(1, 64);
  std::bernoulli_distribution done_dist(0.1);
  double worst = 0.0;
  bool identities = true;
  const double gammas[] = {0.0, 0.5, 0.9, 0.99, 1.0};
  const double lambdas[] = {0.0, 0.5, 0.95, 1.0};
  for (double gamma : gammas) {
    for (double lambda : lambdas) {
      for (int rep = 0; rep < 20; ++rep) {
        const int n = len_dist(rng);
        std::vector<double> r(n), v(n);
        std::vector<std::uint8_t> d(n);
        for (int i = 0; i < n; ++i) {
          r[i] = u(rng);
          v[i] = u(rng);
          d[i] = done_dist(rng) ? 1 : 0;
        }
        const double boot = u(rng);
        const GaeResult got = compute_gae(r, v, d, boot, gamma, lambda);
        auto next_value = [&](int i) { return d[i] ? 0.0 : (i + 1 < n ? v[i + 1] : boot); };
        for (int t = 0; t < n; ++t) {
          long double ref = 0.0L;
          long double w = 1.0L;
          for (int l = t; l < n; ++l) {
            const double delta = r[l] + gamma * next_value(l) - v[l];
            ref += w * delta;
            if (d[l]) break;
            w *= static_cast<long double>(gamma) * lambda;
          }
          worst = std::max(worst, static_cast<double>(std::fabs(ref - got.advantages[t])));
          if (lambda == 0.0) {
            const double delta = r[t] + gamma * next_value(t) - v[t];
            identities = identities && got.advantages[t] == delta;
          }
        }
      }
    }
  }
  // lambda = 1 on dyadic data (exact in binary floating point): A_t = sum gamma^k r + gamma^(n-t) V_boot - V_t.
  std::uniform_int_distribution<int> small(-16, 16);
  for (double gamma : {0.5, 1.0}) {
    for (int rep = 0; rep < 20; ++rep) {
      const int n = len_dist(rng) % 20 + 1;
      std::vector<double> r(n), v(n);
      std::vector<std::uint8_t> d(n, 0);
      for (int i = 0; i < n; ++i) {
        r[i] = small(rng) / 8.0;
        v[i] = small(rng) / 8.0;
      }
      const double boot = small(rng) / 8.0;
      const GaeResult got = compute_gae(r, v, d, boot, gamma, 1.0);
      for (int t = 0; t < n; ++t) {
        double ret = 0.0;
        double w = 1.0;
        for (int l = t; l < n; ++l) {
          ret += w * r[l];
          w *= gamma;
        }
        ret += w * boot;
        identities = identities && got.returns[t] == ret && got.advantages[t] == ret - v[t];
      }
    }
  }
  return make("gae", worst <= kGaeTol && identities,
              "max |delta| " + fmt(worst) + (identities ? ", identities exact" : ", identity mismatch"));
}

namespace {

double worst_fd(Eigen::VectorXd& params, const Eigen::VectorXd& analytic, const std::function<double()>& loss) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + kGradStep;
    const double up = loss();
    params[i] = keep - kGradStep;
    const double down = loss();
    params[i] = keep;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * kGradStep)));
  }
  return worst;
}

std::vector<int> random_layers(std::mt19937_64& rng, int in, int out) {
  std::uniform_int_distribution<int> depth(1, 3);
  std::uniform_int_distribution<int> width(2, 10);
  std::vector<int> sizes{in};
  const int d = depth(rng);
  for (int i = 0; i < d; ++i) sizes.push_back(width(rng));
  sizes.push_back(out);
  return sizes;
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

/// Regression heads (critic, velocity and return estimators): a random linear functional of the output.
double check_regression_head(std::mt19937_64& rng, int out_dim) {
  std::uniform_int_distribution<int> in_dist(2, 12);
  std::uniform_int_distribution<int> batch_dist(1, 5);
  Mlp net(random_layers(rng, in_dist(rng), out_dim));
  net.init_orthogonal(rng, 1.0, 1.0);
  net.params() += random_matrix(rng, net.num_params(), 1, 0.1).col(0);
  Eigen::MatrixXd x = random_matrix(rng, net.input_dim(), batch_dist(rng));
  const Eigen::MatrixXd w = random_matrix(rng, out_dim, x.cols());
  auto loss = [&] { return (net.forward(x, nullptr).array() * w.array()).sum(); };
  Mlp::Cache cache;
  net.forward(x, &cache);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.num_params());
  Eigen::MatrixXd input_grad;
  net.backward(cache, w, grad, &input_grad);
  double worst = worst_fd(net.params(), grad, loss);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + kGradStep;
    const double up = loss();
    x.data()[i] = keep - kGradStep;
    const double down = loss();
    x.data()[i] = keep;
    worst = std::max(worst, relative_error(input_grad.data()[i], (up - down) / (2.0 * kGradStep)));
  }
  return worst;
}

/// Gaussian actor + critic through the PPO minibatch objective.
double check_ppo_head(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> in_dist(2, 12);
  std::uniform_int_distribution<int> batch_dist(2, 6);
  std::uniform_real_distribution<double> ls_dist(-1.5, 0.5);
  std::uniform_real_distribution<double> shift(-0.4, 0.4);
  const int act_dim = 3;
  GaussianPolicy actor(random_layers(rng, in_dist(rng), act_dim), 0.0);
  actor.mean.init_orthogonal(rng, 1.0, 1.0);
  for (Eigen::Index i = 0; i < act_dim; ++i) actor.log_std[i] = ls_dist(rng);
  Mlp critic(random_layers(rng, in_dist(rng), 1));
  critic.init_orthogonal(rng, 1.0, 1.0);

  PpoConfig cfg;
  const int b = batch_dist(rng);
  PpoBatch batch;
  batch.actor_inputs = random_matrix(rng, actor.mean.input_dim(), b);
  batch.critic_inputs = random_matrix(rng, critic.input_dim(), b);
  const Eigen::MatrixXd mean = actor.mean.forward(batch.actor_inputs, nullptr);
  batch.actions = mean + random_matrix(rng, act_dim, b, 0.5);
  batch.old_log_probs.resize(b);
  batch.advantages = random_matrix(rng, b, 1).col(0);
  batch.returns = random_matrix(rng, b, 1).col(0);
  for (int j = 0; j < b; ++j) {
    const double logp = gaussian_log_prob(batch.actions.col(j), mean.col(j), actor.log_std);
    // Keep the ratio clear of the clip corners so the objective is smooth within the FD stencil.
    double s = shift(rng);
    while (std::abs(std::abs(std::exp(s) - 1.0) - cfg.clip) < 1e-2) s = shift(rng);
    batch.old_log_probs[j] = logp - s;
  }

  const PpoLoss l = ppo_minibatch_loss(actor, critic, batch, cfg);
  auto loss = [&] { return ppo_minibatch_loss(actor, critic, batch, cfg).loss; };
  double worst = worst_fd(actor.mean.params(), l.actor_grad, loss);
  worst = std::max(worst, worst_fd(actor.log_std, l.log_std_grad, loss));
  worst = std::max(worst, worst_fd(critic.params(), l.critic_grad, loss));
  return worst;
}

}  // namespace

Check gradients(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst_value = 0.0, worst_velocity = 0.0, worst_actor = 0.0;
  for (int c = 0; c < kGradConfigs; ++c) {
    worst_value = std::max(worst_value, check_regression_head(rng, 1));
    worst_velocity = std::max(worst_velocity, check_regression_head(rng, 3));
    worst_actor = std::max(worst_actor, check_ppo_head(rng));
  }
  const double worst = std::max({worst_value, worst_velocity, worst_actor});
  return make("gradients", worst <= kGradRelTol,
              "scalar head " + fmt(worst_value) + ", vector head " + fmt(worst_velocity) + ", actor/critic PPO " +
                  fmt(worst_actor));
}

Check noise_identities(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> h(-1.0, 1.0);
  HeightMap map(12, 7);
  for (double& c : map.cells) c = h(rng);
  std::vector<std::string> failures;

  DelayBuffer empty(0.02);
  for (NoiseKind kind : {NoiseKind::GaussianAdd, NoiseKind::ShiftForward, NoiseKind::ShiftLateral, NoiseKind::Float}) {
    for (std::uint64_t ep : {0ULL, 1ULL, 2ULL, 3ULL}) {
      NoiseChannel ch(NoiseSpec{kind, 0.0, 0}, ep);
      if (!(ch.apply(map, empty, rng) == map)) failures.push_back("level-0 " + to_string(kind));
    }
  }

  for (ShiftDirection dir : {ShiftDirection::Forward, ShiftDirection::Lateral}) {
    for (LateralSide side : {LateralSide::Right, LateralSide::Left}) {
      const HeightMap out = apply_shift(map, dir, 1.0, side, rng);
      for (std::size_t i = 0; i < map.size(); ++i) {
        if (out.cells[i] == map.cells[i]) {
          failures.push_back("full shift left a cell");
          break;
        }
      }
    }
  }

  for (double level : {0.25, 0.5, 1.0}) {
    for (std::uint64_t ep : {0ULL, 1ULL}) {
      NoiseChannel ch(NoiseSpec{NoiseKind::Float, level, 0}, ep);
      const HeightMap out = ch.apply(map, empty, rng);
      const double offset = (ep % 2 == 0 ? 1.0 : -1.0) * level * kFloatRange;
      for (std::size_t i = 0; i < map.size(); ++i) {
        if (out.cells[i] != map.cells[i] + offset) {
          failures.push_back("float offset");
          break;
        }
      }
    }
  }

  DelayBuffer buf(0.02, 0.5);
  for (int k = 0; k < 40; ++k) buf.push(HeightMap(2, 2, static_cast<double>(k)));
  const int stored = static_cast<int>(buf.size());
  for (int j = 0; j < 30; ++j) {
    const double expected = 39.0 - std::min(j, stored - 1);
    if (buf.delayed(j * 0.02).cells[0] != expected) failures.push_back("delay index " + std::to_string(j));
    NoiseChannel ch(NoiseSpec{NoiseKind::Delay, std::min(j * 0.02, 0.5), 0}, 0);
    const double via_channel = ch.apply(HeightMap(2, 2, 99.0), buf, rng).cells[0];
    const double want = j == 0 ? 99.0 : 39.0 - std::min(j, stored - 1);
    if (j * 0.02 <= 0.5 && via_channel != want) failures.push_back("delay channel " + std::to_string(j));
  }

  std::string detail = failures.empty() ? "level-0, full shift, float, delay exact" : failures.front();
  return make("noise identities", failures.empty(), detail);
}

Check switch_rule(std::uint64_t seed) {
  ComposerConfig cfg;
  cfg.switch_period = 10;
  cfg.alpha_threshold = 0.5;
  cfg.smoothing_window = 5;
  cfg.v_lock = 1.5;
  const Action av{1.0, 0.0, 0.0};
  const Action ab{-1.0, 0.0, 0.0};
  int table_cases = 0;
  int table_fail = 0;
  for (int bits = 0; bits < 16; ++bits) {
    const bool vision_higher = bits & 1;
    const bool blind_above = bits & 2;
    const bool dwell_expired = bits & 4;
    const bool locked = bits & 8;
    for (Phase start : {Phase::Vision, Phase::Blind}) {
      const double g_b = 1.0;
      const double g_v = vision_higher ? 2.0 : 0.0;
      // Window history sets G_th = mean(window) - alpha on either side of g_b.
      const double fill = blind_above ? g_b : g_b + 10.0;
      ComposerState s;
      s.active = start;
      s.dwell = dwell_expired ? cfg.switch_period - 1 : cfg.switch_period - 3;
      for (int k = 0; k < cfg.smoothing_window - 1; ++k) {
        s.vision_window.push_back(g_v);
        s.blind_window.push_back(fill);
      }
      const double speed = locked ? 2.0 * cfg.v_lock : 0.0;
      const Selection sel = select_action(s, cfg, ReturnEstimates{g_v, g_b}, av, ab, speed);
      const Phase desired = vision_higher && blind_above ? Phase::Vision : Phase::Blind;
      const Phase expected = dwell_expired && !locked ? desired : start;
      ++table_cases;
      const bool ok = sel.phase == expected && sel.switched == (expected != start) &&
                      sel.action.forward_accel == (expected == Phase::Vision ? 1.0 : -1.0) &&
                      (sel.threshold < g_b) == blind_above;
      if (!ok) ++table_fail;
    }
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> speed_dist(0.0, 2.0);
  bool freq_ok = true;
  std::string freq_detail;
  for (int period : {1, 5, 50, 100}) {
    ComposerConfig c = cfg;
    c.switch_period = period;
    ComposerState s = initial_composer_state(c);
    const int steps = 5000;
    int switches = 0;
    int last = -period;
    int min_gap = steps;
    for (int t = 0; t < steps; ++t) {
      const Selection sel = select_action(s, c, ReturnEstimates{n(rng), n(rng)}, av, ab, speed_dist(rng));
      if (sel.switched) {
        ++switches;
        min_gap = std::min(min_gap, t - last);
        last = t;
      }
      s = sel.next;
    }
    const int bound = (steps + period - 1) / period;
    freq_ok = freq_ok && switches <= bound && min_gap >= period;
    freq_detail += " T=" + std::to_string(period) + ":" + std::to_string(switches) + "/" + std::to_string(steps);
  }
  return make("switch rule", table_fail == 0 && freq_ok,
              std::to_string(table_cases - table_fail) + "/" + std::to_string(table_cases) + " table cases;" +
                  freq_detail);
}

Check softmax(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> q_dist(-5.0, 5.0);
  std::uniform_real_distribution<double> tau_dist(0.1, 5.0);
  std::uniform_int_distribution<int> size_dist(2, 6);
  std::uniform_int_distribution<int> dyadic(-4096, 4096);
  std::uniform_int_distribution<int> shift_dist(-1000, 1000);
  double worst = 0.0;
  bool invariant = true;
  for (int c = 0; c < 1000; ++c) {
    const int n = size_dist(rng);
    const double tau = tau_dist(rng);
    std::vector<double> q(n);
    for (double& x : q) x = q_dist(rng);
    const std::vector<double> p = softmax_probabilities(q, tau);
    long double z = 0.0L;
    for (double x : q) z += std::exp(static_cast<long double>(x) / tau);
    for (int i = 0; i < n; ++i) {
      const long double ref = std::exp(static_cast<long double>(q[i]) / tau) / z;
      worst = std::max(worst, static_cast<double>(std::fabs(ref - p[i])));
    }
    // Shift invariance on values whose sums are exact in binary floating point.
    std::vector<double> qd(n), qs(n);
    const double shift = shift_dist(rng);
    for (int i = 0; i < n; ++i) {
      qd[i] = dyadic(rng) / 1024.0;
      qs[i] = qd[i] + shift;
    }
    invariant = invariant && softmax_probabilities(qd, tau) == softmax_probabilities(qs, tau);
  }
  return make("softmax", worst <= kSoftmaxTol && invariant,
              "max |delta| " + fmt(worst) + (invariant ? ", shift invariant" : ", shift changed output"));
}

namespace {

Trajectory synthetic_trajectory() {
  Trajectory t;
  ObstacleSpec a;
  a.kind = ObstacleKind::Hurdle;
  a.x_start = 3.0;
  ObstacleSpec b = a;
  b.x_start = 6.0;
  t.profile.obstacles = {a, b};
  const double xs[10] = {0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0};
  const double vx[10] = {0.5, 0.5, 0.5, 0.3, 0.5, 0.6, 0.5, 0.5, 0.5, 0.5};
  const double vy[10] = {0.0, 0.0, 0.0, 0.4, 0.0, 0.8, 0.0, 0.0, 0.0, 0.0};
  const double reward[10] = {1.0, 1.0, 1.0, -0.5, 1.0, 1.0, 1.0, 1.0, 2.0, 0.5};
  const bool collision[10] = {false, false, false, true, false, false, true, false, false, false};
  const int goal[10] = {0, 0, 0, 0, 1, 1, 1, 1, 1, 2};
  for (int i = 0; i < 10; ++i) {
    StepRecord s;
    s.position = {xs[i], 0.0, 0.0};
    s.velocity = {vx[i], vy[i], 0.0};
    s.reward = reward[i];
    s.collision = collision[i];
    s.goal_index = goal[i];
    t.steps.push_back(s);
  }
  return t;
}

}  // namespace

Check metrics() {
  // Worked by hand: goals 2/8; reward sum 9; speeds nine 0.5 and one 1.0; collisions at steps 3 and 6;
  // goal 0 zone entered at x >= 1.0 (step 1), captured at step 4 -> 4 steps; goal 1 zone entered at
  // x >= 4.0 (step 7), captured at step 9 -> 3 steps.
  const EpisodeMetrics m = compute_metrics(synthetic_trajectory());
  std::vector<std::string> bad;
  if (m.goals_completed_pct != 25.0) bad.push_back("goals");
  if (m.episode_reward != 9.0) bad.push_back("reward");
  if (std::abs(m.average_velocity - 0.55) > 1e-15) bad.push_back("velocity");
  if (m.failed != 0.0) bad.push_back("fail");
  if (m.collision_steps_pct != 20.0) bad.push_back("collision");
  if (m.reach_steps != std::vector<int>{4, 3} || m.mean_reach_steps() != 3.5) bad.push_back("reach");

  Trajectory fell = synthetic_trajectory();
  fell.fell = true;
  if (compute_metrics(fell).failed != 1.0) bad.push_back("fail flag");

  std::string detail = bad.empty() ? "six metrics match" : "mismatch:";
  for (const auto& b : bad) detail += " " + b;
  return make("metrics", bad.empty(), detail);
}

std::vector<Check> run_all(std::uint64_t seed) {
  return {lambda_return(seed), gae(seed + 1), gradients(seed + 2), noise_identities(seed + 3),
          switch_rule(seed + 4), softmax(seed + 5), metrics()};
}

}  // namespace vbcom::oracles
