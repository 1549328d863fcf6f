#include "vbcom/rl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "vbcom/seed.hpp"

namespace vbcom {

std::string to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::Vision: return "vision";
    case PolicyKind::Blind: return "blind";
    case PolicyKind::NoisyPerceptive: return "noisy_perceptive";
  }
  return "unknown";
}

PolicyKind policy_kind_from_string(const std::string& name) {
  if (name == "vision") return PolicyKind::Vision;
  if (name == "blind") return PolicyKind::Blind;
  if (name == "noisy" || name == "noisy_perceptive") return PolicyKind::NoisyPerceptive;
  throw std::invalid_argument("unknown policy kind '" + name + "'");
}

namespace {

void check_hidden(const std::vector<int>& hidden, const std::string& key) {
  for (int h : hidden) {
    if (h <= 0) throw std::invalid_argument("approximator." + key + " sizes must be > 0");
  }
}

std::vector<int> layers(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

template <typename Fn>
void parallel_for(int n, int workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int w = std::min(workers, n);
  std::vector<std::thread> pool;
  pool.reserve(w);
  for (int k = 0; k < w; ++k) {
    pool.emplace_back([&, k] {
      for (int i = k; i < n; i += w) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

void validate(const ApproximatorConfig& c) {
  check_hidden(c.actor_hidden, "actor_hidden");
  check_hidden(c.critic_hidden, "critic_hidden");
  check_hidden(c.velocity_hidden, "velocity_hidden");
  check_hidden(c.estimator_hidden, "estimator_hidden");
  if (c.init_log_std < kLogStdMin || c.init_log_std > kLogStdMax) {
    throw std::invalid_argument("approximator.init_log_std must lie in [-4, 1]");
  }
}

void validate(const PpoConfig& c) {
  if (!(c.gamma > 0.0 && c.gamma <= 1.0)) throw std::invalid_argument("ppo.gamma must lie in (0, 1]");
  if (!(c.lambda > 0.0 && c.lambda <= 1.0)) throw std::invalid_argument("ppo.lambda must lie in (0, 1]");
  if (!(c.clip > 0.0)) throw std::invalid_argument("ppo.clip must be > 0");
  if (c.epochs < 1) throw std::invalid_argument("ppo.epochs must be >= 1");
  if (c.minibatches < 1) throw std::invalid_argument("ppo.minibatches must be >= 1");
  if (c.horizon < 1) throw std::invalid_argument("ppo.horizon must be >= 1");
  if (c.num_envs < 1) throw std::invalid_argument("ppo.num_envs must be >= 1");
  if (!(c.learning_rate > 0.0)) throw std::invalid_argument("ppo.learning_rate must be > 0");
  if (!(c.max_grad_norm > 0.0)) throw std::invalid_argument("ppo.max_grad_norm must be > 0");
}

void validate(const TrainConfig& c) {
  if (c.updates < 0) throw std::invalid_argument("train.updates must be >= 0");
  if (c.velocity_warmup < 0) throw std::invalid_argument("train.velocity_warmup must be >= 0");
  if (c.estimator_epochs < 1) throw std::invalid_argument("train.estimator_epochs must be >= 1");
  if (c.estimator_minibatch < 1) throw std::invalid_argument("train.estimator_minibatch must be >= 1");
  if (c.promote_goals <= c.demote_goals) throw std::invalid_argument("train.promote_goals must exceed demote_goals");
  if (c.start_level < 0) throw std::invalid_argument("train.start_level must be >= 0");
  if (c.workers < 1) throw std::invalid_argument("train.workers must be >= 1");
}

int history_dim(const EnvConfig& config) { return config.history_length * kFrameDim; }

int actor_input_dim(PolicyKind kind) {
  return kFrameDim + kVelocityDim + (uses_heightmap(kind) ? kActorGrid.rows * kActorGrid.cols : 0);
}

int critic_input_dim() { return kFrameDim + kVelocityDim + kCriticGrid.rows * kCriticGrid.cols; }

PolicyBundle make_bundle(PolicyKind kind, const ApproximatorConfig& c, const EnvConfig& env, std::mt19937_64& rng) {
  PolicyBundle b;
  b.kind = kind;
  b.actor = GaussianPolicy(layers(actor_input_dim(kind), c.actor_hidden, kActionDim), c.init_log_std);
  b.actor.mean.init_orthogonal(rng, 1.0, c.output_gain);
  b.critic = Mlp(layers(critic_input_dim(), c.critic_hidden, 1));
  b.critic.init_orthogonal(rng, 1.0, 1.0);
  b.velocity_estimator = Mlp(layers(history_dim(env), c.velocity_hidden, kVelocityDim));
  b.velocity_estimator.init_orthogonal(rng, 1.0, 1.0);
  b.return_estimator = Mlp(layers(history_dim(env), c.estimator_hidden, 1));
  b.return_estimator.init_orthogonal(rng, 1.0, 1.0);
  b.return_estimator_mc = Mlp(layers(history_dim(env), c.estimator_hidden, 1));
  b.return_estimator_mc.init_orthogonal(rng, 1.0, 1.0);
  return b;
}

Eigen::VectorXd history_input(const Env& env) {
  const std::vector<double> h = env.history();
  return Eigen::Map<const Eigen::VectorXd>(h.data(), static_cast<Eigen::Index>(h.size()));
}

namespace {

void fill_actor_input(const Env& env, const PolicyBundle& bundle, const Eigen::Vector3d& velocity,
                      Eigen::Ref<Eigen::VectorXd> out) {
  const std::vector<double>& frame = env.frame();
  for (int i = 0; i < kFrameDim; ++i) out[i] = frame[i];
  for (int i = 0; i < kVelocityDim; ++i) out[kFrameDim + i] = velocity[i];
  if (uses_heightmap(bundle.kind)) {
    const auto& cells = env.actor_heightmap().cells;
    for (std::size_t i = 0; i < cells.size(); ++i) out[kFrameDim + kVelocityDim + static_cast<Eigen::Index>(i)] = cells[i];
  }
}

void fill_critic_input(const Env& env, Eigen::Ref<Eigen::VectorXd> out) {
  const std::vector<double> frame = env.critic_frame();
  for (int i = 0; i < kFrameDim; ++i) out[i] = frame[i];
  const Vec3& v = env.state().velocity;
  out[kFrameDim] = v.x;
  out[kFrameDim + 1] = v.y;
  out[kFrameDim + 2] = v.z;
  const auto& cells = env.critic_heightmap().cells;
  for (std::size_t i = 0; i < cells.size(); ++i) out[kFrameDim + kVelocityDim + static_cast<Eigen::Index>(i)] = cells[i];
}

void fill_history(const Env& env, Eigen::Ref<Eigen::VectorXd> out) {
  const std::vector<double> h = env.history();
  for (std::size_t i = 0; i < h.size(); ++i) out[static_cast<Eigen::Index>(i)] = h[i];
}

}  // namespace

Eigen::VectorXd actor_input(const Env& env, const PolicyBundle& bundle) {
  Eigen::VectorXd in(actor_input_dim(bundle.kind));
  Eigen::Vector3d vel = Eigen::Vector3d::Zero();
  if (bundle.velocity_estimate_active) vel = bundle.velocity_estimator.forward(history_input(env));
  fill_actor_input(env, bundle, vel, in);
  return in;
}

Eigen::VectorXd critic_input(const Env& env) {
  Eigen::VectorXd in(critic_input_dim());
  fill_critic_input(env, in);
  return in;
}

Action policy_action(const PolicyBundle& bundle, const Env& env, bool deterministic, std::mt19937_64& rng) {
  const Eigen::VectorXd mean = bundle.actor.mean.forward(actor_input(env, bundle));
  const GaussianSample s = gaussian_head(mean, bundle.actor.log_std, rng, deterministic);
  return action_from_normalized(std::span<const double>(s.action.data(), kActionDim), env.config());
}

std::filesystem::path bundle_prefix(const std::filesystem::path& dir, PolicyKind kind) {
  return dir / to_string(kind);
}

namespace {

std::filesystem::path part(const std::filesystem::path& dir, PolicyKind kind, const std::string& suffix) {
  return dir / (to_string(kind) + suffix);
}

}  // namespace

void save_bundle(const std::filesystem::path& dir, const PolicyBundle& b) {
  std::filesystem::create_directories(dir);
  save_policy(part(dir, b.kind, "_actor.bin"), b.actor, b.meta);
  save_mlp(part(dir, b.kind, "_critic.bin"), b.critic, b.meta);
  save_mlp(part(dir, b.kind, "_velocity.bin"), b.velocity_estimator, b.meta);
  save_mlp(part(dir, b.kind, "_return.bin"), b.return_estimator, b.meta);
  save_mlp(part(dir, b.kind, "_return_mc.bin"), b.return_estimator_mc, b.meta);
  nlohmann::json j;
  j["kind"] = to_string(b.kind);
  j["velocity_estimate_active"] = b.velocity_estimate_active;
  j["config_hash"] = b.meta.config_hash;
  j["seed"] = b.meta.seed;
  std::ofstream(part(dir, b.kind, ".json")) << j.dump(2) << "\n";
}

bool bundle_exists(const std::filesystem::path& dir, PolicyKind kind) {
  for (const char* s : {"_actor.bin", "_critic.bin", "_velocity.bin", "_return.bin", "_return_mc.bin", ".json"}) {
    if (!std::filesystem::exists(part(dir, kind, s))) return false;
  }
  return true;
}

PolicyBundle load_bundle(const std::filesystem::path& dir, PolicyKind kind) {
  for (const char* s : {"_actor.bin", "_critic.bin", "_velocity.bin", "_return.bin", "_return_mc.bin", ".json"}) {
    if (!std::filesystem::exists(part(dir, kind, s))) throw MissingCheckpoint(to_string(kind), part(dir, kind, s));
  }
  PolicyBundle b;
  b.kind = kind;
  b.actor = load_policy(part(dir, kind, "_actor.bin"), &b.meta);
  b.critic = load_mlp(part(dir, kind, "_critic.bin"));
  b.velocity_estimator = load_mlp(part(dir, kind, "_velocity.bin"));
  b.return_estimator = load_mlp(part(dir, kind, "_return.bin"));
  b.return_estimator_mc = load_mlp(part(dir, kind, "_return_mc.bin"));
  std::ifstream in(part(dir, kind, ".json"));
  const nlohmann::json j = nlohmann::json::parse(in);
  b.velocity_estimate_active = j.at("velocity_estimate_active").get<bool>();
  if (b.actor.mean.input_dim() != actor_input_dim(kind)) {
    throw std::runtime_error("checkpoint for " + to_string(kind) + " has an unexpected actor input size");
  }
  return b;
}

PpoOptimizers make_optimizers(const PpoConfig& config) {
  AdamConfig a;
  a.learning_rate = config.learning_rate;
  return PpoOptimizers{Adam(a), Adam(a), Adam(a)};
}

std::vector<double> normalize_advantages(std::span<const double> adv) {
  const double n = static_cast<double>(adv.size());
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double std = std::sqrt(var / n);
  std::vector<double> out(adv.size());
  for (std::size_t i = 0; i < adv.size(); ++i) out[i] = (adv[i] - mean) / (std + 1e-8);
  return out;
}

double clipped_surrogate(double ratio, double advantage, double clip) {
  const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
  return std::min(ratio * advantage, clipped * advantage);
}

PpoLoss ppo_minibatch_loss(const GaussianPolicy& actor, const Mlp& critic, const PpoBatch& batch,
                           const PpoConfig& cfg) {
  const int b = static_cast<int>(batch.actions.cols());
  const int act_dim = actor.mean.output_dim();
  const double log_norm = 0.5 * act_dim * kLog2Pi;
  Mlp::Cache actor_cache;
  Mlp::Cache critic_cache;

  const Eigen::MatrixXd mean = actor.mean.forward(batch.actor_inputs, &actor_cache);
  const Eigen::VectorXd ls = actor.clamped_log_std();
  const Eigen::ArrayXd inv_std = (-ls.array()).exp();
  const Eigen::ArrayXXd z = (batch.actions - mean).array().colwise() * inv_std;
  const Eigen::ArrayXd logp = -0.5 * z.square().colwise().sum().transpose() - ls.sum() - log_norm;
  const Eigen::ArrayXd log_ratio = logp - batch.old_log_probs.array();
  const Eigen::ArrayXd ratio = log_ratio.exp();

  PpoLoss out;
  double surr = 0.0;
  double clipped = 0.0;
  Eigen::ArrayXd dlogp(b);
  for (int j = 0; j < b; ++j) {
    const double a = batch.advantages[j];
    const double s1 = ratio[j] * a;
    const double s2 = std::clamp(ratio[j], 1.0 - cfg.clip, 1.0 + cfg.clip) * a;
    surr += std::min(s1, s2);
    dlogp[j] = s1 <= s2 ? -a * ratio[j] / b : 0.0;
    if (std::abs(ratio[j] - 1.0) > cfg.clip) clipped += 1.0;
  }
  out.policy_loss = -surr / b;
  out.entropy = gaussian_entropy(actor.log_std);
  out.clip_fraction = clipped / b;

  const Eigen::MatrixXd value = critic.forward(batch.critic_inputs, &critic_cache);
  const Eigen::ArrayXd verr = value.row(0).transpose().array() - batch.returns.array();
  out.value_loss = verr.square().mean();
  out.approx_kl = ((ratio - 1.0) - log_ratio).mean();
  out.loss = out.policy_loss + cfg.value_coef * out.value_loss - cfg.entropy_coef * out.entropy;

  // d loss / d mean = dlogp * z / std; d loss / d log_std = sum_j dlogp_j (z^2 - 1) - c_ent.
  const Eigen::MatrixXd dmean = ((z.rowwise() * dlogp.transpose()).colwise() * inv_std).matrix();
  out.actor_grad = Eigen::VectorXd::Zero(actor.mean.num_params());
  actor.mean.backward(actor_cache, dmean, out.actor_grad);
  const Eigen::ArrayXd zsq = ((z.square() - 1.0).rowwise() * dlogp.transpose()).rowwise().sum();
  out.log_std_grad.resize(act_dim);
  for (int i = 0; i < act_dim; ++i) {
    const bool free = actor.log_std[i] > kLogStdMin && actor.log_std[i] < kLogStdMax;
    out.log_std_grad[i] = free ? zsq[i] - cfg.entropy_coef : 0.0;
  }
  out.critic_grad = Eigen::VectorXd::Zero(critic.num_params());
  const Eigen::MatrixXd dvalue = (2.0 * cfg.value_coef / b) * verr.matrix().transpose();
  critic.backward(critic_cache, dvalue, out.critic_grad);
  return out;
}

PpoStats ppo_update(GaussianPolicy& actor, Mlp& critic, PpoOptimizers& opt, const RolloutBuffer& buf,
                    const PpoConfig& cfg, std::mt19937_64& rng) {
  if (!buf.finalized) throw std::logic_error("PPO update needs a finalized buffer");
  const int n = buf.size();
  const std::vector<double> adv = normalize_advantages(buf.advantages);
  const int mb_size = (n + cfg.minibatches - 1) / cfg.minibatches;
  const int act_dim = actor.mean.output_dim();

  std::vector<int> order(n);
  PpoStats stats;
  int batches = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_kl = 0.0;
    int epoch_batches = 0;
    for (int start = 0, mb = 0; start < n; start += mb_size, ++mb) {
      const int b = std::min(mb_size, n - start);
      PpoBatch batch;
      batch.actor_inputs.resize(buf.actor_inputs.rows(), b);
      batch.critic_inputs.resize(buf.critic_inputs.rows(), b);
      batch.actions.resize(act_dim, b);
      batch.old_log_probs.resize(b);
      batch.advantages.resize(b);
      batch.returns.resize(b);
      for (int j = 0; j < b; ++j) {
        const int i = order[start + j];
        batch.actor_inputs.col(j) = buf.actor_inputs.col(i);
        batch.critic_inputs.col(j) = buf.critic_inputs.col(i);
        batch.actions.col(j) = buf.actions.col(i);
        batch.old_log_probs[j] = buf.log_probs[i];
        batch.advantages[j] = adv[i];
        batch.returns[j] = buf.returns[i];
      }

      PpoLoss l = ppo_minibatch_loss(actor, critic, batch, cfg);
      if (!std::isfinite(l.loss) || !std::isfinite(l.approx_kl)) throw NonFiniteLoss(epoch, mb);

      Eigen::VectorXd* actor_blocks[] = {&l.actor_grad, &l.log_std_grad};
      clip_grad_norm(actor_blocks, cfg.max_grad_norm);
      Eigen::VectorXd* critic_blocks[] = {&l.critic_grad};
      clip_grad_norm(critic_blocks, cfg.max_grad_norm);

      const double kl = l.approx_kl;
      if (cfg.adaptive_lr && cfg.desired_kl > 0.0) {
        double lr = opt.actor.config().learning_rate;
        if (kl > 2.0 * cfg.desired_kl) lr = std::max(1e-5, lr / 1.5);
        else if (kl < 0.5 * cfg.desired_kl && kl > 0.0) lr = std::min(1e-2, lr * 1.5);
        opt.actor.config().learning_rate = lr;
        opt.log_std.config().learning_rate = lr;
        opt.critic.config().learning_rate = lr;
      }
      opt.actor.step(actor.mean.params(), l.actor_grad);
      opt.log_std.step(actor.log_std, l.log_std_grad);
      opt.critic.step(critic.params(), l.critic_grad);

      stats.policy_loss += l.policy_loss;
      stats.value_loss += l.value_loss;
      stats.entropy += l.entropy;
      stats.approx_kl += kl;
      stats.clip_fraction += l.clip_fraction;
      epoch_kl += kl;
      ++batches;
      ++epoch_batches;
    }
    stats.epochs_run = epoch + 1;
    if (cfg.early_stop_kl > 0.0 && epoch_kl / epoch_batches > cfg.early_stop_kl) break;
  }
  if (batches > 0) {
    stats.policy_loss /= batches;
    stats.value_loss /= batches;
    stats.entropy /= batches;
    stats.approx_kl /= batches;
    stats.clip_fraction /= batches;
  }
  stats.learning_rate = opt.actor.config().learning_rate;
  return stats;
}

double train_velocity_estimator(Mlp& estimator, Adam& adam, const Eigen::MatrixXd& histories,
                                const Eigen::MatrixXd& targets, int epochs, int minibatch, std::mt19937_64& rng) {
  if (histories.rows() == 0) throw std::invalid_argument("velocity estimator needs a non-empty history");
  if (estimator.input_dim() != histories.rows()) {
    throw std::invalid_argument("velocity estimator input does not match the history dimension");
  }
  if (estimator.output_dim() != kVelocityDim) throw std::invalid_argument("velocity estimator must output 3 values");
  if (targets.cols() != histories.cols()) throw std::invalid_argument("velocity targets and histories are misaligned");
  std::vector<int> samples(static_cast<std::size_t>(histories.cols()));
  std::iota(samples.begin(), samples.end(), 0);
  return fit_regression(estimator, adam, histories, samples, targets, epochs, minibatch, rng);
}

CurriculumState make_curriculum(int num_envs, int start_level, int max_level, int promote_goals, int demote_goals) {
  CurriculumState c;
  c.max_level = max_level;
  c.promote_goals = promote_goals;
  c.demote_goals = demote_goals;
  c.levels.assign(num_envs, std::clamp(start_level, 0, max_level));
  c.promotions.assign(num_envs, 0);
  c.demotions.assign(num_envs, 0);
  return c;
}

CurriculumState curriculum_update(CurriculumState c, std::span<const EpisodeOutcome> outcomes) {
  for (const auto& o : outcomes) {
    int& level = c.levels.at(o.env);
    if (o.goals >= c.promote_goals) {
      if (level < c.max_level) ++c.promotions[o.env];
      level = std::min(level + 1, c.max_level);
    } else if (o.goals <= c.demote_goals) {
      if (level > 0) ++c.demotions[o.env];
      level = std::max(level - 1, 0);
    }
  }
  return c;
}

double mean_level(const CurriculumState& c) {
  if (c.levels.empty()) return 0.0;
  return std::accumulate(c.levels.begin(), c.levels.end(), 0.0) / static_cast<double>(c.levels.size());
}

std::string to_csv(const CurveRow& r) {
  std::ostringstream os;
  os << std::setprecision(8) << r.update << ',' << r.mean_step_reward << ',' << r.mean_episode_reward << ','
     << r.mean_goals << ',' << r.fall_rate << ',' << r.terrain_level << ',' << r.velocity_loss << ',' << r.return_loss << ','
     << r.return_loss_mc << ',' << r.policy_loss << ',' << r.value_loss << ',' << r.approx_kl << ','
     << r.learning_rate << ',' << r.episodes;
  return os.str();
}

NoiseSpec sample_training_noise(double tl, std::mt19937_64& rng) {
  static constexpr NoiseKind kKinds[] = {NoiseKind::GaussianAdd, NoiseKind::ShiftForward, NoiseKind::ShiftLateral,
                                         NoiseKind::Float};
  std::uniform_int_distribution<int> pick(0, 3);
  std::uniform_real_distribution<double> level(0.0, std::clamp(tl, 0.0, 1.0));
  NoiseSpec spec;
  spec.kind = kKinds[pick(rng)];
  spec.level = level(rng);
  spec.stream = rng();
  return spec;
}

namespace {

struct Slot {
  Env env;
  std::mt19937_64 rng;
  int episode = 0;
  double episode_reward = 0.0;

  Slot(const EnvConfig& c, std::uint64_t seed) : env(c), rng(seed) {}
};

bool params_finite(const PolicyBundle& b) {
  return b.actor.mean.params().allFinite() && b.actor.log_std.allFinite() && b.critic.params().allFinite() &&
         b.velocity_estimator.params().allFinite() && b.return_estimator.params().allFinite() &&
         b.return_estimator_mc.params().allFinite();
}

struct CollectStats {
  std::vector<EpisodeOutcome> outcomes;
  std::vector<double> episode_rewards;
  int falls = 0;
};

// Parallel environments stepping one policy; episodes restart on the curriculum level of their slot.
class Collector {
 public:
  Collector(PolicyKind kind, const TrainSetup& setup, std::uint64_t seed, CurriculumState curriculum)
      : kind_(kind), setup_(setup), seed_(seed), curriculum_(std::move(curriculum)) {
    const int envs = setup.ppo.num_envs;
    slots_.reserve(envs);
    for (int e = 0; e < envs; ++e) slots_.emplace_back(setup.env, derive_seed(seed, {3, static_cast<std::uint64_t>(e)}));
    for (int e = 0; e < envs; ++e) start_episode(e);
  }

  CurriculumState& curriculum() { return curriculum_; }

  RolloutBuffer collect(const PolicyBundle& bundle, CollectStats& stats) {
    const int envs = setup_.ppo.num_envs;
    const int horizon = setup_.ppo.horizon;
    const int a_dim = actor_input_dim(kind_);
    const int c_dim = critic_input_dim();
    const int h_dim = history_dim(setup_.env);
    const int workers = setup_.train.workers;
    RolloutBuffer buf(envs, horizon, a_dim, c_dim, h_dim, kActionDim);
    Eigen::MatrixXd xa(a_dim, envs), xc(c_dim, envs), xh(h_dim, envs);
    std::vector<std::pair<int, Eigen::VectorXd>> bootstrap;  // (buffer index, critic input after truncation)

    for (int t = 0; t < horizon; ++t) {
      parallel_for(envs, workers, [&](int e) {
        fill_history(slots_[e].env, xh.col(e));
        fill_critic_input(slots_[e].env, xc.col(e));
      });
      const Eigen::MatrixXd vel = bundle.velocity_estimate_active ? bundle.velocity_estimator.forward(xh, nullptr)
                                                                  : Eigen::MatrixXd::Zero(kVelocityDim, envs);
      for (int e = 0; e < envs; ++e) fill_actor_input(slots_[e].env, bundle, vel.col(e), xa.col(e));
      const Eigen::MatrixXd mean = bundle.actor.mean.forward(xa, nullptr);
      const Eigen::MatrixXd value = bundle.critic.forward(xc, nullptr);

      std::vector<Transition> trans(envs);
      std::vector<GaussianSample> samples(envs);
      parallel_for(envs, workers, [&](int e) {
        Slot& s = slots_[e];
        samples[e] = gaussian_head(mean.col(e), bundle.actor.log_std, s.rng);
        trans[e] = s.env.step(
            action_from_normalized(std::span<const double>(samples[e].action.data(), kActionDim), setup_.env));
      });

      for (int e = 0; e < envs; ++e) {
        const int i = buf.index(e, t);
        Slot& s = slots_[e];
        const Transition& tr = trans[e];
        buf.actor_inputs.col(i) = xa.col(e);
        buf.critic_inputs.col(i) = xc.col(e);
        buf.histories.col(i) = xh.col(e);
        buf.actions.col(i) = samples[e].action;
        buf.log_probs[i] = samples[e].log_prob;
        buf.values[i] = value(0, e);
        buf.rewards[i] = tr.reward;
        buf.next_velocities.col(i) << tr.info.true_velocity.x, tr.info.true_velocity.y, tr.info.true_velocity.z;
        buf.terminated[i] = tr.terminated;
        s.episode_reward += tr.reward;
        if (tr.terminated || tr.truncated) {
          buf.episode_end[i] = 1;
          if (tr.truncated) bootstrap.emplace_back(i, critic_input(s.env));
          stats.outcomes.push_back({e, s.env.state().goal_index});
          stats.episode_rewards.push_back(s.episode_reward);
          stats.falls += tr.terminated ? 1 : 0;
          start_episode(e);
        }
      }
    }

    // Bootstrap values: next step within the segment, the final observation after a time-limit
    // cut, and the live observation at the end of the horizon.
    Eigen::MatrixXd tail(c_dim, envs);
    for (int e = 0; e < envs; ++e) fill_critic_input(slots_[e].env, tail.col(e));
    const Eigen::MatrixXd tail_v = bundle.critic.forward(tail, nullptr);
    for (int e = 0; e < envs; ++e) {
      for (int t = 0; t < horizon; ++t) {
        const int i = buf.index(e, t);
        if (buf.episode_end[i]) buf.next_values[i] = 0.0;
        else buf.next_values[i] = t + 1 < horizon ? buf.values[i + 1] : tail_v(0, e);
      }
    }
    if (!bootstrap.empty()) {
      Eigen::MatrixXd bx(c_dim, static_cast<Eigen::Index>(bootstrap.size()));
      for (std::size_t k = 0; k < bootstrap.size(); ++k) bx.col(static_cast<Eigen::Index>(k)) = bootstrap[k].second;
      const Eigen::MatrixXd bv = bundle.critic.forward(bx, nullptr);
      for (std::size_t k = 0; k < bootstrap.size(); ++k) {
        buf.next_values[bootstrap[k].first] = bv(0, static_cast<Eigen::Index>(k));
      }
    }
    buf.finalize(setup_.ppo.gamma, setup_.ppo.lambda);
    return buf;
  }

 private:
  void start_episode(int e) {
    Slot& s = slots_[e];
    const int level = curriculum_.levels[e];
    const std::uint64_t ep_seed =
        derive_seed(seed_, {4, static_cast<std::uint64_t>(e), static_cast<std::uint64_t>(s.episode)});
    PerceptionConfig p;
    p.actor_map = uses_heightmap(kind_);
    p.critic_map = true;
    p.training_noise = uses_heightmap(kind_);
    if (kind_ == PolicyKind::NoisyPerceptive) {
      p.eval_noise = sample_training_noise(level_difficulty(setup_.terrain, level), s.rng);
    }
    s.env.set_perception(p);
    s.env.reset(generate_profile(setup_.terrain, level, ep_seed), ep_seed);
    s.episode_reward = 0.0;
    ++s.episode;
  }

  PolicyKind kind_;
  const TrainSetup& setup_;
  std::uint64_t seed_;
  CurriculumState curriculum_;
  std::vector<Slot> slots_;
};

void validate(const TrainSetup& setup) {
  validate(setup.terrain);
  validate(setup.env);
  validate(setup.approximator);
  validate(setup.ppo);
  validate(setup.composer);
  validate(setup.train);
}

}  // namespace

TrainResult train_policy(PolicyKind kind, const TrainSetup& setup, std::uint64_t seed,
                         const std::filesystem::path& out_dir, const ProgressFn& progress) {
  validate(setup);
  const PpoConfig& ppo = setup.ppo;
  const TrainConfig& tc = setup.train;

  std::mt19937_64 init_rng(derive_seed(seed, {1}));
  std::mt19937_64 update_rng(derive_seed(seed, {2}));
  TrainResult result;
  result.bundle = make_bundle(kind, setup.approximator, setup.env, init_rng);
  PolicyBundle& bundle = result.bundle;
  bundle.meta = CheckpointMeta{setup.config_hash, seed};
  bundle.velocity_estimate_active = tc.velocity_warmup == 0;

  Collector collector(kind, setup, seed,
                      make_curriculum(ppo.num_envs, tc.start_level, setup.terrain.tl_max, tc.promote_goals,
                                      tc.demote_goals));
  PpoOptimizers opt = make_optimizers(ppo);
  AdamConfig est_cfg;
  est_cfg.learning_rate = tc.estimator_lr;
  Adam vel_opt(est_cfg), ret_opt(est_cfg), ret_mc_opt(est_cfg);

  std::ofstream curve_out;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    curve_out.open(out_dir / (to_string(kind) + "_curve.csv"));
    curve_out << kCurveHeader << "\n";
  }

  PolicyBundle last_good = bundle;
  for (int update = 0; update < tc.updates; ++update) {
    bundle.velocity_estimate_active = update >= tc.velocity_warmup;
    CollectStats stats;
    const RolloutBuffer buf = collector.collect(bundle, stats);

    CurveRow row;
    row.update = update;
    try {
      const PpoStats ps = ppo_update(bundle.actor, bundle.critic, opt, buf, ppo, update_rng);
      row.policy_loss = ps.policy_loss;
      row.value_loss = ps.value_loss;
      row.approx_kl = ps.approx_kl;
      row.learning_rate = ps.learning_rate;
      row.velocity_loss = train_velocity_estimator(bundle.velocity_estimator, vel_opt, buf.histories,
                                                   buf.next_velocities, tc.estimator_epochs, tc.estimator_minibatch,
                                                   update_rng);
      row.return_loss = train_return_estimator(bundle.return_estimator, ret_opt, buf, setup.composer,
                                               EstimatorTarget::TdLambda, ppo.gamma, tc.estimator_epochs,
                                               tc.estimator_minibatch, update_rng);
      row.return_loss_mc = train_return_estimator(bundle.return_estimator_mc, ret_mc_opt, buf, setup.composer,
                                                  EstimatorTarget::MonteCarlo, ppo.gamma, tc.estimator_epochs,
                                                  tc.estimator_minibatch, update_rng);
    } catch (const std::runtime_error& err) {
      result.halted = true;
      result.halt_reason = err.what();
    }
    if (!result.halted && !params_finite(bundle)) {
      result.halted = true;
      result.halt_reason = "non-finite parameters after update " + std::to_string(update);
    }
    if (result.halted) {
      bundle = last_good;
      break;
    }
    last_good = bundle;

    collector.curriculum() = curriculum_update(std::move(collector.curriculum()), stats.outcomes);
    row.mean_step_reward = std::accumulate(buf.rewards.begin(), buf.rewards.end(), 0.0) / buf.size();
    row.episodes = static_cast<int>(stats.outcomes.size());
    if (!stats.outcomes.empty()) {
      const double n = static_cast<double>(stats.outcomes.size());
      row.mean_episode_reward = std::accumulate(stats.episode_rewards.begin(), stats.episode_rewards.end(), 0.0) / n;
      double goals = 0.0;
      for (const auto& o : stats.outcomes) goals += o.goals;
      row.mean_goals = goals / n;
      row.fall_rate = stats.falls / n;
    }
    row.terrain_level = mean_level(collector.curriculum());
    result.curve.push_back(row);
    if (curve_out) curve_out << to_csv(row) << stamp_columns({setup.config_hash, seed}) << "\n" << std::flush;
    if (progress) progress(row);
    if (!out_dir.empty() && tc.checkpoint_every > 0 && (update + 1) % tc.checkpoint_every == 0) {
      save_bundle(out_dir / "checkpoints" / ("update_" + std::to_string(update + 1)), bundle);
    }
  }
  result.curriculum = collector.curriculum();
  if (!out_dir.empty()) save_bundle(out_dir, bundle);
  return result;
}

EstimatorFit fit_return_estimator(const PolicyBundle& bundle, const TrainSetup& setup, const ComposerConfig& composer,
                                  EstimatorTarget target, int rounds, std::uint64_t seed) {
  validate(setup);
  validate(composer);
  std::mt19937_64 init_rng(derive_seed(seed, {11}));
  std::mt19937_64 fit_rng(derive_seed(seed, {12}));
  EstimatorFit fit;
  fit.estimator = Mlp(layers(history_dim(setup.env), setup.approximator.estimator_hidden, 1));
  fit.estimator.init_orthogonal(init_rng, 1.0, 1.0);
  AdamConfig cfg;
  cfg.learning_rate = setup.train.estimator_lr;
  Adam adam(cfg);
  Collector collector(bundle.kind, setup, seed,
                      make_curriculum(setup.ppo.num_envs, setup.train.start_level, setup.terrain.tl_max,
                                      setup.train.promote_goals, setup.train.demote_goals));
  for (int r = 0; r < rounds; ++r) {
    CollectStats stats;
    const RolloutBuffer buf = collector.collect(bundle, stats);
    fit.losses.push_back(train_return_estimator(fit.estimator, adam, buf, composer, target, setup.ppo.gamma,
                                                setup.train.estimator_epochs, setup.train.estimator_minibatch,
                                                fit_rng));
    collector.curriculum() = curriculum_update(std::move(collector.curriculum()), stats.outcomes);
  }
  return fit;
}

}  // namespace vbcom
