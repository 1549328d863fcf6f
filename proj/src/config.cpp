#include "vbcom/config.hpp"

#include <fstream>
#include <limits>
#include <set>

namespace vbcom {

using nlohmann::json;

namespace {

std::string type_name(const json& v) { return v.type_name(); }

/// Reads one JSON object, tracking consumed keys so leftovers can be reported by path.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object, got " + type_name(j_));
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  Reader child(const std::string& key) {
    seen_.insert(key);
    return Reader(j_.at(key), join(key));
  }

  void read(const std::string& key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) mismatch(key, "a number", *v);
      out = v->get<double>();
    }
  }

  void read(const std::string& key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) mismatch(key, "an integer", *v);
      const auto x = v->get<std::int64_t>();
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
        throw ConfigError(join(key) + " is out of range");
      }
      out = static_cast<int>(x);
    }
  }

  void read(const std::string& key, std::uint64_t& out) {
    if (const json* v = take(key)) {
      if (v->is_number_unsigned()) {
        out = v->get<std::uint64_t>();
      } else if (v->is_number_integer()) {
        throw ConfigError(join(key) + " must be >= 0");
      } else {
        mismatch(key, "a non-negative integer", *v);
      }
    }
  }

  void read(const std::string& key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) mismatch(key, "a boolean", *v);
      out = v->get<bool>();
    }
  }

  void read(const std::string& key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) mismatch(key, "a string", *v);
      out = v->get<std::string>();
    }
  }

  void read(const std::string& key, std::optional<double>& out) {
    if (const json* v = take(key)) {
      if (v->is_null()) {
        out.reset();
      } else if (v->is_number()) {
        out = v->get<double>();
      } else {
        mismatch(key, "a number or null", *v);
      }
    }
  }

  template <typename T>
  void read(const std::string& key, std::vector<T>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) mismatch(key, "an array", *v);
      std::vector<T> items;
      for (std::size_t i = 0; i < v->size(); ++i) {
        json wrapper = json::object();
        wrapper["item"] = (*v)[i];
        Reader r(wrapper, join(key) + "[" + std::to_string(i) + "]");
        T item{};
        r.read_item(item);
        items.push_back(item);
      }
      out = std::move(items);
    }
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key '" + join(key) + "'");
    }
  }

 private:
  template <typename T>
  void read_item(T& out) {
    item_mode_ = true;
    read("item", out);
  }

  const json* take(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) return nullptr;
    return &j_.at(key);
  }

  [[noreturn]] void mismatch(const std::string& key, const char* expected, const json& v) const {
    throw ConfigError(join(key) + " must be " + expected + ", got " + type_name(v));
  }

  std::string join(const std::string& key) const {
    if (item_mode_) return path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
  bool item_mode_ = false;
};

void read_terrain(Reader r, TerrainConfig& c) {
  r.read("track_length", c.track_length);
  r.read("half_width", c.half_width);
  r.read("spacing_min", c.spacing_min);
  r.read("spacing_max", c.spacing_max);
  r.read("waypoint_offset", c.waypoint_offset);
  r.read("tl_max", c.tl_max);
  if (r.has("mix")) {
    Reader m = r.child("mix");
    m.read("gap", c.mix.gap);
    m.read("hurdle", c.mix.hurdle);
    m.read("wall", c.mix.wall);
    m.read("flat", c.mix.flat);
    m.finish();
  }
  r.finish();
}

void read_env(Reader r, EnvConfig& c) {
  r.read("dt", c.dt);
  r.read("a_max", c.a_max);
  r.read("j_max", c.j_max);
  r.read("jump_min", c.jump_min);
  r.read("damping", c.damping);
  r.read("air_control", c.air_control);
  r.read("gravity", c.gravity);
  r.read("goal_radius", c.goal_radius);
  r.read("v_c", c.v_c);
  r.read("episode_cap", c.episode_cap);
  r.read("body_half_length", c.body_half_length);
  r.read("body_half_width", c.body_half_width);
  r.read("body_height", c.body_height);
  r.read("contact_threshold", c.contact_threshold);
  r.read("odometry_noise", c.odometry_noise);
  r.read("start_jitter", c.start_jitter);
  r.read("fall_margin", c.fall_margin);
  r.read("history_length", c.history_length);
  r.read("scale_rewards_by_dt", c.scale_rewards_by_dt);
  r.read("project_goal_velocity", c.project_goal_velocity);
  if (r.has("weights")) {
    Reader w = r.child("weights");
    w.read("goal_velocity", c.weights.goal_velocity);
    w.read("heading", c.weights.heading);
    w.read("collision", c.weights.collision);
    w.read("lin_vel_z", c.weights.lin_vel_z);
    w.read("action_rate", c.weights.action_rate);
    w.finish();
  }
  r.finish();
}

void read_noise(Reader r, NoiseConfig& c) {
  r.read("eval_grid", c.eval_grid);
  r.read("ablation", c.ablation);
  r.read("trace", c.trace);
  r.finish();
}

void read_approximator(Reader r, ApproximatorConfig& c) {
  r.read("actor_hidden", c.actor_hidden);
  r.read("critic_hidden", c.critic_hidden);
  r.read("velocity_hidden", c.velocity_hidden);
  r.read("estimator_hidden", c.estimator_hidden);
  r.read("init_log_std", c.init_log_std);
  r.read("output_gain", c.output_gain);
  r.finish();
}

void read_ppo(Reader r, PpoConfig& c) {
  r.read("gamma", c.gamma);
  r.read("lambda", c.lambda);
  r.read("clip", c.clip);
  r.read("epochs", c.epochs);
  r.read("minibatches", c.minibatches);
  r.read("entropy_coef", c.entropy_coef);
  r.read("value_coef", c.value_coef);
  r.read("horizon", c.horizon);
  r.read("num_envs", c.num_envs);
  r.read("learning_rate", c.learning_rate);
  r.read("adaptive_lr", c.adaptive_lr);
  r.read("desired_kl", c.desired_kl);
  r.read("early_stop_kl", c.early_stop_kl);
  r.read("max_grad_norm", c.max_grad_norm);
  r.finish();
}

void read_composer(Reader r, ComposerConfig& c) {
  r.read("T", c.switch_period);
  r.read("lambda_ret", c.lambda_ret);
  r.read("normalized_targets", c.normalized_targets);
  r.read("alpha_threshold", c.alpha_threshold);
  r.read("window", c.smoothing_window);
  r.read("v_lock", c.v_lock);
  r.read("softmax_temperature", c.softmax_temperature);
  std::string selector = to_string(c.selector);
  r.read("selector", selector);
  if (selector == "threshold") c.selector = Selector::Threshold;
  else if (selector == "softmax") c.selector = Selector::Softmax;
  else throw ConfigError("composer.selector must be 'threshold' or 'softmax'");
  std::string target = to_string(c.target);
  r.read("estimator", target);
  if (target == "td_lambda") c.target = EstimatorTarget::TdLambda;
  else if (target == "mc") c.target = EstimatorTarget::MonteCarlo;
  else throw ConfigError("composer.estimator must be 'td_lambda' or 'mc'");
  r.finish();
}

void read_eval(Reader r, EvalConfig& c) {
  r.read("methods", c.methods);
  r.read("episodes", c.episodes);
  r.read("repeats", c.repeats);
  r.read("level", c.level);
  r.read("workers", c.workers);
  r.read("checkpoint_dir", c.checkpoint_dir);
  r.read("periods", c.periods);
  r.read("alphas", c.alphas);
  r.read("estimator_rounds", c.estimator_rounds);
  r.read("trace_episodes", c.trace_episodes);
  r.finish();
}

void read_train(Reader r, TrainConfig& c) {
  r.read("updates", c.updates);
  r.read("velocity_warmup", c.velocity_warmup);
  r.read("checkpoint_every", c.checkpoint_every);
  r.read("estimator_epochs", c.estimator_epochs);
  r.read("estimator_minibatch", c.estimator_minibatch);
  r.read("estimator_lr", c.estimator_lr);
  r.read("promote_goals", c.promote_goals);
  r.read("demote_goals", c.demote_goals);
  r.read("start_level", c.start_level);
  r.read("workers", c.workers);
  r.finish();
}

template <typename Fn>
void rethrow_as_config(Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

void validate(const RunConfig& c) {
  rethrow_as_config([&] {
    validate(c.terrain);
    validate(c.env);
    validate(c.approximator);
    validate(c.ppo);
    validate(c.composer);
    validate(c.train);
    for (const auto& s : c.noise.eval_grid) validate(parse_noise_spec(s));
    validate(parse_noise_spec(c.noise.ablation));
    validate(parse_noise_spec(c.noise.trace));
    for (const auto& m : c.eval.methods) method_from_string(m);
  });
  const EvalConfig& e = c.eval;
  if (e.methods.empty()) throw ConfigError("eval.methods must not be empty");
  if (e.episodes < 1) throw ConfigError("eval.episodes must be >= 1");
  if (e.repeats < 1) throw ConfigError("eval.repeats must be >= 1");
  if (e.level < -1 || e.level > c.terrain.tl_max) throw ConfigError("eval.level must be -1 or in [0, terrain.tl_max]");
  if (e.workers < 1) throw ConfigError("eval.workers must be >= 1");
  if (e.estimator_rounds < 1) throw ConfigError("eval.estimator_rounds must be >= 1");
  if (e.trace_episodes < 1) throw ConfigError("eval.trace_episodes must be >= 1");
  for (int p : e.periods) {
    if (p < 1) throw ConfigError("eval.periods entries must be >= 1");
  }
  for (const auto& a : e.alphas) {
    if (a && !(*a >= 0.0)) throw ConfigError("eval.alphas entries must be >= 0 or null");
  }
  if (c.train.start_level > c.terrain.tl_max) throw ConfigError("train.start_level must be <= terrain.tl_max");
  if (c.output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

RunConfig parse_config(const json& j) {
  RunConfig c;
  Reader root(j, "");
  if (root.has("terrain")) read_terrain(root.child("terrain"), c.terrain);
  if (root.has("env")) read_env(root.child("env"), c.env);
  if (root.has("noise")) read_noise(root.child("noise"), c.noise);
  if (root.has("approximator")) read_approximator(root.child("approximator"), c.approximator);
  if (root.has("ppo")) read_ppo(root.child("ppo"), c.ppo);
  if (root.has("composer")) read_composer(root.child("composer"), c.composer);
  if (root.has("eval")) read_eval(root.child("eval"), c.eval);
  if (root.has("train")) read_train(root.child("train"), c.train);
  root.read("seed", c.seed);
  root.read("output_dir", c.output_dir);
  root.finish();
  validate(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

json to_json(const RunConfig& c) {
  json j;
  const TerrainConfig& t = c.terrain;
  j["terrain"] = {{"track_length", t.track_length},
                  {"half_width", t.half_width},
                  {"spacing_min", t.spacing_min},
                  {"spacing_max", t.spacing_max},
                  {"waypoint_offset", t.waypoint_offset},
                  {"tl_max", t.tl_max},
                  {"mix", {{"gap", t.mix.gap}, {"hurdle", t.mix.hurdle}, {"wall", t.mix.wall}, {"flat", t.mix.flat}}}};
  const EnvConfig& e = c.env;
  j["env"] = {{"dt", e.dt},
              {"a_max", e.a_max},
              {"j_max", e.j_max},
              {"jump_min", e.jump_min},
              {"damping", e.damping},
              {"air_control", e.air_control},
              {"gravity", e.gravity},
              {"goal_radius", e.goal_radius},
              {"v_c", e.v_c},
              {"episode_cap", e.episode_cap},
              {"body_half_length", e.body_half_length},
              {"body_half_width", e.body_half_width},
              {"body_height", e.body_height},
              {"contact_threshold", e.contact_threshold},
              {"odometry_noise", e.odometry_noise},
              {"start_jitter", e.start_jitter},
              {"fall_margin", e.fall_margin},
              {"history_length", e.history_length},
              {"scale_rewards_by_dt", e.scale_rewards_by_dt},
              {"project_goal_velocity", e.project_goal_velocity},
              {"weights",
               {{"goal_velocity", e.weights.goal_velocity},
                {"heading", e.weights.heading},
                {"collision", e.weights.collision},
                {"lin_vel_z", e.weights.lin_vel_z},
                {"action_rate", e.weights.action_rate}}}};
  j["noise"] = {{"eval_grid", c.noise.eval_grid}, {"ablation", c.noise.ablation}, {"trace", c.noise.trace}};
  const ApproximatorConfig& a = c.approximator;
  j["approximator"] = {{"actor_hidden", a.actor_hidden},         {"critic_hidden", a.critic_hidden},
                       {"velocity_hidden", a.velocity_hidden},   {"estimator_hidden", a.estimator_hidden},
                       {"init_log_std", a.init_log_std},         {"output_gain", a.output_gain}};
  const PpoConfig& p = c.ppo;
  j["ppo"] = {{"gamma", p.gamma},
              {"lambda", p.lambda},
              {"clip", p.clip},
              {"epochs", p.epochs},
              {"minibatches", p.minibatches},
              {"entropy_coef", p.entropy_coef},
              {"value_coef", p.value_coef},
              {"horizon", p.horizon},
              {"num_envs", p.num_envs},
              {"learning_rate", p.learning_rate},
              {"adaptive_lr", p.adaptive_lr},
              {"desired_kl", p.desired_kl},
              {"early_stop_kl", p.early_stop_kl},
              {"max_grad_norm", p.max_grad_norm}};
  const ComposerConfig& k = c.composer;
  j["composer"] = {{"T", k.switch_period},
                   {"lambda_ret", k.lambda_ret},
                   {"normalized_targets", k.normalized_targets},
                   {"alpha_threshold", optional_json(k.alpha_threshold)},
                   {"window", k.smoothing_window},
                   {"v_lock", k.v_lock},
                   {"softmax_temperature", k.softmax_temperature},
                   {"selector", to_string(k.selector)},
                   {"estimator", to_string(k.target)}};
  json alphas = json::array();
  for (const auto& x : c.eval.alphas) alphas.push_back(optional_json(x));
  j["eval"] = {{"methods", c.eval.methods},
               {"episodes", c.eval.episodes},
               {"repeats", c.eval.repeats},
               {"level", c.eval.level},
               {"workers", c.eval.workers},
               {"checkpoint_dir", c.eval.checkpoint_dir},
               {"periods", c.eval.periods},
               {"alphas", alphas},
               {"estimator_rounds", c.eval.estimator_rounds},
               {"trace_episodes", c.eval.trace_episodes}};
  const TrainConfig& r = c.train;
  j["train"] = {{"updates", r.updates},
                {"velocity_warmup", r.velocity_warmup},
                {"checkpoint_every", r.checkpoint_every},
                {"estimator_epochs", r.estimator_epochs},
                {"estimator_minibatch", r.estimator_minibatch},
                {"estimator_lr", r.estimator_lr},
                {"promote_goals", r.promote_goals},
                {"demote_goals", r.demote_goals},
                {"start_level", r.start_level},
                {"workers", r.workers}};
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  return j;
}

std::uint64_t config_hash(const RunConfig& c) {
  json j = to_json(c);
  j.erase("output_dir");
  j["eval"].erase("workers");
  j["eval"].erase("checkpoint_dir");
  j["train"].erase("workers");
  const std::string text = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

void apply_env_overrides(RunConfig& c, const std::function<const char*(const char*)>& getenv) {
  if (const char* dir = getenv("VBCOM_OUTPUT_DIR"); dir && *dir) c.output_dir = dir;
  if (const char* w = getenv("VBCOM_WORKERS"); w && *w) {
    int n = 0;
    try {
      std::size_t used = 0;
      n = std::stoi(w, &used);
      if (used != std::string(w).size()) n = 0;
    } catch (const std::exception&) {
      n = 0;
    }
    if (n < 1) throw ConfigError("VBCOM_WORKERS must be a positive integer");
    c.eval.workers = n;
    c.train.workers = n;
  }
}

TrainSetup train_setup(const RunConfig& c) {
  TrainSetup s;
  s.terrain = c.terrain;
  s.env = c.env;
  s.approximator = c.approximator;
  s.ppo = c.ppo;
  s.composer = c.composer;
  s.train = c.train;
  s.config_hash = config_hash(c);
  return s;
}

SuiteConfig suite_config(const RunConfig& c) {
  SuiteConfig s;
  s.methods.clear();
  for (const auto& m : c.eval.methods) s.methods.push_back(method_from_string(m));
  for (const auto& n : c.noise.eval_grid) s.noise_grid.push_back(parse_noise_spec(n));
  s.episodes = c.eval.episodes;
  s.repeats = c.eval.repeats;
  s.level = c.eval.level;
  s.seed = c.seed;
  s.workers = c.eval.workers;
  return s;
}

AblationConfig ablation_config(const RunConfig& c, AblationKind kind) {
  AblationConfig a;
  a.kind = kind;
  a.periods = c.eval.periods;
  a.alphas = c.eval.alphas;
  a.noise_grid = {parse_noise_spec(c.noise.ablation)};
  a.estimator_rounds = c.eval.estimator_rounds;
  a.suite = suite_config(c);
  return a;
}

std::filesystem::path checkpoint_dir(const RunConfig& c) {
  if (!c.eval.checkpoint_dir.empty()) return c.eval.checkpoint_dir;
  return std::filesystem::path(c.output_dir) / "checkpoints";
}

}  // namespace vbcom
