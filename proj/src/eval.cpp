#include "vbcom/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "vbcom/seed.hpp"

namespace vbcom {

std::string to_string(Method method) {
  switch (method) {
    case Method::VbCom: return "vbcom";
    case Method::Vision: return "vision";
    case Method::Blind: return "blind";
    case Method::NoisyPerceptive: return "noisy_perceptive";
  }
  return "unknown";
}

Method method_from_string(const std::string& name) {
  if (name == "vbcom" || name == "composite") return Method::VbCom;
  if (name == "vision") return Method::Vision;
  if (name == "blind") return Method::Blind;
  if (name == "noisy" || name == "noisy_perceptive") return Method::NoisyPerceptive;
  throw std::invalid_argument("unknown method '" + name + "'");
}

ControlStep PolicyController::act(const Env& env) { return {policy_action(*bundle_, env, true, rng_), std::nullopt}; }

CompositeController::CompositeController(std::shared_ptr<const PolicyBundle> vision,
                                         std::shared_ptr<const PolicyBundle> blind, CompositeEstimators estimators,
                                         ComposerConfig config)
    : vision_(std::move(vision)), blind_(std::move(blind)), estimators_(std::move(estimators)), config_(config) {
  validate(config_);
  if (!vision_ || !blind_ || !estimators_.vision || !estimators_.blind) {
    throw std::invalid_argument("composite controller needs both policies and both estimators");
  }
  state_ = initial_composer_state(config_);
}

void CompositeController::reset(std::uint64_t seed) {
  rng_.seed(seed);
  state_ = initial_composer_state(config_);
}

ControlStep CompositeController::act(const Env& env) {
  const std::vector<double> history = env.history();
  const ReturnEstimates est = estimate(*estimators_.vision, *estimators_.blind, history);
  const Action a_v = policy_action(*vision_, env, true, rng_);
  const Action a_b = policy_action(*blind_, env, true, rng_);
  const std::vector<double>& frame = env.frame();
  const double speed = std::hypot(frame[kFrameOdometry], frame[kFrameOdometry + 1]);

  Selection sel = select_action(state_, config_, est, a_v, a_b, speed);
  if (config_.selector == Selector::Softmax) {
    const double q[2] = {est.blind, sel.smoothed_vision};
    const Phase pick = softmax_select(q, config_.softmax_temperature, rng_) == 1 ? Phase::Vision : Phase::Blind;
    sel.switched = pick != state_.active;
    sel.next.active = pick;
    sel.phase = pick;
    sel.action = pick == Phase::Vision ? a_v : a_b;
  }
  state_ = sel.next;

  ComposerTrace trace;
  trace.vision_estimate = est.vision;
  trace.vision_smoothed = sel.smoothed_vision;
  trace.blind_estimate = est.blind;
  trace.threshold = sel.threshold;
  trace.phase = sel.phase;
  trace.switched = sel.switched;
  return {sel.action, trace};
}

double EpisodeMetrics::mean_reach_steps() const {
  if (reach_steps.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(reach_steps.begin(), reach_steps.end(), 0.0) / static_cast<double>(reach_steps.size());
}

EpisodeMetrics compute_metrics(const Trajectory& traj) {
  EpisodeMetrics m;
  m.steps = static_cast<int>(traj.steps.size());
  if (traj.steps.empty()) return m;
  int collisions = 0;
  double speed = 0.0;
  int goal = 0;
  int segment_start = 0;  // first step spent pursuing the current goal
  int zone_entry = -1;
  for (int i = 0; i < m.steps; ++i) {
    const StepRecord& s = traj.steps[i];
    m.episode_reward += s.reward;
    collisions += s.collision ? 1 : 0;
    speed += std::hypot(s.velocity.x, s.velocity.y);
    if (goal < static_cast<int>(traj.profile.obstacles.size()) && zone_entry < 0 &&
        s.position.x >= traj.profile.obstacles[goal].x_start - kApproachZone) {
      zone_entry = i;
    }
    while (goal < s.goal_index && goal < kNumGoals) {
      const int entry = zone_entry >= 0 ? zone_entry : segment_start;
      m.reach_steps.push_back(i - entry + 1);
      ++goal;
      segment_start = i + 1;
      zone_entry = -1;
    }
  }
  m.goals = goal;
  m.goals_completed_pct = 100.0 * goal / kNumGoals;
  m.average_velocity = speed / m.steps;
  m.failed = traj.fell ? 1.0 : 0.0;
  m.collision_steps_pct = 100.0 * collisions / m.steps;
  return m;
}

EpisodeResult run_episode(Controller& controller, const TerrainProfile& profile, const NoiseSpec& noise,
                          std::uint64_t seed, const EnvConfig& env_config) {
  PerceptionConfig p;
  p.actor_map = true;
  p.critic_map = false;
  p.training_noise = false;
  p.eval_noise = noise;
  Env env(env_config, p);
  env.reset(profile, seed);
  controller.reset(seed);
  EpisodeResult out;
  out.trajectory.profile = profile;
  out.trajectory.steps.reserve(static_cast<std::size_t>(env.max_steps()));
  while (true) {
    const ControlStep cs = controller.act(env);
    const Transition tr = env.step(cs.action);
    StepRecord r;
    r.position = env.state().position;
    r.velocity = env.state().velocity;
    r.reward = tr.reward;
    r.collision = std::any_of(tr.info.collision_bodies.begin(), tr.info.collision_bodies.end(), [](bool b) { return b; });
    r.goal_index = tr.info.goal_index;
    r.fell = tr.info.fell;
    r.composer = cs.composer;
    out.trajectory.steps.push_back(r);
    if (tr.terminated || tr.truncated) {
      out.trajectory.fell = tr.terminated;
      break;
    }
  }
  out.metrics = compute_metrics(out.trajectory);
  return out;
}

PolicySet load_policies(const std::filesystem::path& dir, const std::vector<Method>& methods) {
  PolicySet set;
  auto need = [&](Method m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); };
  auto load = [&](PolicyKind kind, Method method) {
    if (!bundle_exists(dir, kind)) throw MissingCheckpoint(to_string(method), bundle_prefix(dir, kind));
    return std::make_shared<const PolicyBundle>(load_bundle(dir, kind));
  };
  if (need(Method::Vision) || need(Method::VbCom)) {
    set.vision = load(PolicyKind::Vision, need(Method::VbCom) ? Method::VbCom : Method::Vision);
  }
  if (need(Method::Blind) || need(Method::VbCom)) {
    set.blind = load(PolicyKind::Blind, need(Method::VbCom) ? Method::VbCom : Method::Blind);
  }
  if (need(Method::NoisyPerceptive)) set.noisy = load(PolicyKind::NoisyPerceptive, Method::NoisyPerceptive);
  return set;
}

namespace {

std::shared_ptr<const Mlp> estimator_of(const std::shared_ptr<const PolicyBundle>& b, EstimatorTarget target) {
  return {b, target == EstimatorTarget::TdLambda ? &b->return_estimator : &b->return_estimator_mc};
}

template <typename Fn>
void parallel_for(int n, int workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int w = std::min(workers, n);
  std::vector<std::thread> pool;
  for (int k = 0; k < w; ++k) {
    pool.emplace_back([&, k] {
      for (int i = k; i < n; i += w) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::string noise_level_text(const NoiseSpec& n) { return format_double(n.level); }

}  // namespace

ControllerFactory make_factory(Method method, const PolicySet& policies, const ComposerConfig& composer) {
  auto require = [&](const std::shared_ptr<const PolicyBundle>& b) {
    if (!b) throw MissingCheckpoint(to_string(method), "<not loaded>");
    return b;
  };
  switch (method) {
    case Method::Vision: {
      auto b = require(policies.vision);
      return [b] { return std::make_unique<PolicyController>(b); };
    }
    case Method::Blind: {
      auto b = require(policies.blind);
      return [b] { return std::make_unique<PolicyController>(b); };
    }
    case Method::NoisyPerceptive: {
      auto b = require(policies.noisy);
      return [b] { return std::make_unique<PolicyController>(b); };
    }
    case Method::VbCom: {
      auto v = require(policies.vision);
      auto b = require(policies.blind);
      CompositeEstimators est{estimator_of(v, composer.target), estimator_of(b, composer.target)};
      return [v, b, est, composer] { return std::make_unique<CompositeController>(v, b, est, composer); };
    }
  }
  throw std::invalid_argument("unknown method");
}

void validate(const SuiteConfig& c) {
  if (c.episodes < 1) throw std::invalid_argument("eval.episodes must be >= 1");
  if (c.repeats < 1) throw std::invalid_argument("eval.repeats must be >= 1");
  if (c.methods.empty()) throw std::invalid_argument("eval.methods must not be empty");
  if (c.workers < 1) throw std::invalid_argument("eval.workers must be >= 1");
  for (const auto& n : c.noise_grid) validate(n);
}

std::vector<NoiseSpec> default_noise_grid() {
  std::vector<NoiseSpec> grid;
  for (double level : {0.0, 0.3, 0.7, 1.0}) grid.push_back(NoiseSpec{NoiseKind::ShiftForward, level, 0});
  return grid;
}

std::vector<NoiseSpec> full_noise_grid() {
  std::vector<NoiseSpec> grid;
  for (NoiseKind kind : {NoiseKind::GaussianAdd, NoiseKind::ShiftForward, NoiseKind::ShiftLateral, NoiseKind::Float}) {
    for (double level : {0.0, 0.3, 0.7, 1.0}) grid.push_back(NoiseSpec{kind, level, 0});
  }
  return grid;
}

MetricStat mean_std(const std::vector<double>& values) {
  MetricStat s;
  std::vector<double> v;
  for (double x : values) {
    if (!std::isnan(x)) v.push_back(x);
  }
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

MetricRow aggregate(const std::string& method, const NoiseSpec& noise,
                    const std::vector<std::vector<EpisodeMetrics>>& repeats) {
  std::vector<double> goals, reward, velocity, fail, collision, reach;
  for (const auto& eps : repeats) {
    if (eps.empty()) continue;
    const double n = static_cast<double>(eps.size());
    double g = 0, r = 0, v = 0, f = 0, c = 0;
    std::vector<int> pooled;
    for (const auto& m : eps) {
      g += m.goals_completed_pct;
      r += m.episode_reward;
      v += m.average_velocity;
      f += m.failed;
      c += m.collision_steps_pct;
      pooled.insert(pooled.end(), m.reach_steps.begin(), m.reach_steps.end());
    }
    goals.push_back(g / n);
    reward.push_back(r / n);
    velocity.push_back(v / n);
    fail.push_back(f / n);
    collision.push_back(c / n);
    reach.push_back(pooled.empty() ? std::numeric_limits<double>::quiet_NaN()
                                   : std::accumulate(pooled.begin(), pooled.end(), 0.0) / pooled.size());
  }
  MetricRow row;
  row.method = method;
  row.noise = noise;
  row.goals_completed_pct = mean_std(goals);
  row.episode_reward = mean_std(reward);
  row.average_velocity = mean_std(velocity);
  row.fail_rate = mean_std(fail);
  row.collision_steps_pct = mean_std(collision);
  row.reach_steps = mean_std(reach);
  return row;
}

TerrainProfile suite_profile(const TerrainConfig& terrain, int level, std::uint64_t seed, int repeat, int episode) {
  return generate_profile(terrain, level,
                          derive_seed(seed, {21, static_cast<std::uint64_t>(repeat), static_cast<std::uint64_t>(episode)}));
}

std::uint64_t suite_episode_seed(std::uint64_t seed, int repeat, int episode) {
  return derive_seed(seed, {22, static_cast<std::uint64_t>(repeat), static_cast<std::uint64_t>(episode)});
}

MetricRow evaluate_cell(const std::string& method, const ControllerFactory& factory, const NoiseSpec& noise,
                        const TerrainConfig& terrain, const EnvConfig& env, const SuiteConfig& suite) {
  const int level = suite.level < 0 ? terrain.tl_max : suite.level;
  const int total = suite.repeats * suite.episodes;
  std::vector<EpisodeMetrics> results(total);
  parallel_for(total, suite.workers, [&](int k) {
    const int r = k / suite.episodes;
    const int e = k % suite.episodes;
    auto controller = factory();
    results[k] = run_episode(*controller, suite_profile(terrain, level, suite.seed, r, e), noise,
                             suite_episode_seed(suite.seed, r, e), env)
                     .metrics;
  });
  std::vector<std::vector<EpisodeMetrics>> repeats(suite.repeats);
  for (int k = 0; k < total; ++k) repeats[k / suite.episodes].push_back(std::move(results[k]));
  return aggregate(method, noise, repeats);
}

std::vector<MetricRow> run_suite(const SuiteConfig& suite, const PolicySet& policies, const TerrainConfig& terrain,
                                 const EnvConfig& env, const ComposerConfig& composer) {
  validate(suite);
  const std::vector<NoiseSpec> grid = suite.noise_grid.empty() ? default_noise_grid() : suite.noise_grid;
  std::vector<std::pair<Method, ControllerFactory>> factories;
  for (Method m : suite.methods) factories.emplace_back(m, make_factory(m, policies, composer));
  std::vector<MetricRow> rows;
  for (const NoiseSpec& noise : grid) {
    for (const auto& [method, factory] : factories) {
      rows.push_back(evaluate_cell(to_string(method), factory, noise, terrain, env, suite));
    }
  }
  return rows;
}

void write_suite_csv(std::ostream& os, const std::vector<MetricRow>& rows, const ArtifactStamp& stamp) {
  const std::string tail = stamp_columns(stamp);
  os << kSuiteHeader << "\n";
  for (const auto& r : rows) {
    os << to_string(r.noise.kind) << ',' << noise_level_text(r.noise) << ',' << r.method;
    for (const MetricStat* s : {&r.goals_completed_pct, &r.episode_reward, &r.average_velocity, &r.fail_rate,
                                &r.collision_steps_pct, &r.reach_steps}) {
      os << ',' << format_double(s->mean) << ',' << format_double(s->std);
    }
    os << tail << "\n";
  }
}

std::string to_string(AblationKind kind) {
  switch (kind) {
    case AblationKind::SwitchPeriod: return "period";
    case AblationKind::Alpha: return "alpha";
    case AblationKind::Estimator: return "estimator";
  }
  return "unknown";
}

AblationKind ablation_kind_from_string(const std::string& name) {
  if (name == "period" || name == "switch_period") return AblationKind::SwitchPeriod;
  if (name == "alpha") return AblationKind::Alpha;
  if (name == "estimator") return AblationKind::Estimator;
  throw std::invalid_argument("unknown ablation kind '" + name + "'");
}

CompositeEstimators refit_estimators(const PolicySet& policies, const TrainSetup& setup, const ComposerConfig& composer,
                                     int rounds, std::uint64_t seed) {
  if (!policies.vision || !policies.blind) throw MissingCheckpoint("vbcom", "<not loaded>");
  CompositeEstimators est;
  est.vision = std::make_shared<const Mlp>(
      fit_return_estimator(*policies.vision, setup, composer, composer.target, rounds, derive_seed(seed, {31})).estimator);
  est.blind = std::make_shared<const Mlp>(
      fit_return_estimator(*policies.blind, setup, composer, composer.target, rounds, derive_seed(seed, {32})).estimator);
  return est;
}

std::vector<MetricRow> run_ablations(const AblationConfig& config, const PolicySet& policies, const TrainSetup& setup,
                                     const ComposerConfig& base) {
  validate(config.suite);
  if (!policies.vision || !policies.blind) throw MissingCheckpoint("vbcom", "<not loaded>");
  const std::vector<NoiseSpec> grid =
      config.noise_grid.empty() ? std::vector<NoiseSpec>{NoiseSpec{NoiseKind::ShiftForward, 1.0, 0}} : config.noise_grid;

  std::vector<std::pair<std::string, ControllerFactory>> settings;
  auto composite = [&](ComposerConfig c, CompositeEstimators est) -> ControllerFactory {
    auto v = policies.vision;
    auto b = policies.blind;
    return [v, b, est, c] { return std::make_unique<CompositeController>(v, b, est, c); };
  };
  auto bundled = [&](EstimatorTarget t) {
    return CompositeEstimators{estimator_of(policies.vision, t), estimator_of(policies.blind, t)};
  };

  switch (config.kind) {
    case AblationKind::SwitchPeriod:
      for (int period : config.periods) {
        ComposerConfig c = base;
        c.switch_period = period;
        c.target = EstimatorTarget::TdLambda;
        settings.emplace_back("T=" + std::to_string(period),
                              composite(c, refit_estimators(policies, setup, c, config.estimator_rounds,
                                                            derive_seed(config.suite.seed, {41, static_cast<std::uint64_t>(period)}))));
      }
      break;
    case AblationKind::Alpha:
      for (const auto& alpha : config.alphas) {
        ComposerConfig c = base;
        c.alpha_threshold = alpha;
        std::ostringstream label;
        if (alpha) label << "alpha=" << *alpha;
        else label << "w/o G_th";
        settings.emplace_back(label.str(), composite(c, bundled(c.target)));
      }
      break;
    case AblationKind::Estimator:
      for (EstimatorTarget t : {EstimatorTarget::TdLambda, EstimatorTarget::MonteCarlo}) {
        ComposerConfig c = base;
        c.target = t;
        settings.emplace_back(to_string(t), composite(c, bundled(t)));
      }
      break;
  }

  std::vector<MetricRow> rows;
  for (const NoiseSpec& noise : grid) {
    for (const auto& [label, factory] : settings) {
      rows.push_back(evaluate_cell(label, factory, noise, setup.terrain, setup.env, config.suite));
    }
  }
  return rows;
}

void write_ablation_csv(std::ostream& os, const std::vector<MetricRow>& rows, const ArtifactStamp& stamp) {
  const std::string tail = stamp_columns(stamp);
  os << kAblationHeader << "\n";
  for (const auto& r : rows) {
    os << r.method << ',' << to_string(r.noise.kind) << ',' << noise_level_text(r.noise);
    for (const MetricStat* s : {&r.goals_completed_pct, &r.collision_steps_pct, &r.reach_steps}) {
      os << ',' << format_double(s->mean) << ',' << format_double(s->std);
    }
    os << tail << "\n";
  }
}

std::vector<TraceRow> trace_episode(CompositeController& controller, const TerrainProfile& profile,
                                    const NoiseSpec& noise, std::uint64_t seed, const EnvConfig& env_config) {
  const EpisodeResult res = run_episode(controller, profile, noise, seed, env_config);
  std::vector<TraceRow> rows;
  rows.reserve(res.trajectory.steps.size());
  int t = 0;
  for (const StepRecord& s : res.trajectory.steps) {
    TraceRow r;
    r.t = t++;
    if (s.composer) {
      r.vision_estimate = s.composer->vision_estimate;
      r.vision_smoothed = s.composer->vision_smoothed;
      r.blind_estimate = s.composer->blind_estimate;
      r.threshold = s.composer->threshold;
      r.phase = static_cast<int>(s.composer->phase);
    }
    r.goal_index = s.goal_index;
    r.reward = s.reward;
    r.collision = s.collision;
    r.x = s.position.x;
    rows.push_back(r);
  }
  return rows;
}

void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& rows, const ArtifactStamp& stamp) {
  const std::string tail = stamp_columns(stamp);
  os << kTraceHeader << "\n";
  for (const auto& r : rows) {
    os << r.t << ',' << format_double(r.vision_estimate) << ',' << format_double(r.vision_smoothed) << ','
       << format_double(r.blind_estimate) << ',' << format_double(r.threshold) << ',' << r.phase << ','
       << r.goal_index << ',' << format_double(r.reward) << ',' << (r.collision ? 1 : 0) << ','
       << format_double(r.x) << tail << "\n";
  }
}

std::optional<int> switch_latency_after_contact(const std::vector<TraceRow>& rows) {
  std::size_t contact = rows.size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].collision) {
      contact = i;
      break;
    }
  }
  if (contact == rows.size()) return std::nullopt;
  for (std::size_t i = std::max<std::size_t>(contact, 1); i < rows.size(); ++i) {
    if (rows[i - 1].phase == 1 && rows[i].phase == 0) return static_cast<int>(i - contact);
  }
  return std::nullopt;
}

}  // namespace vbcom
