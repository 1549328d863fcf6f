#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vbcom/config.hpp"
#include "vbcom/eval.hpp"
#include "vbcom/oracles.hpp"
#include "vbcom/rl.hpp"
#include "vbcom/seed.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vbcom;

namespace {

struct Common {
  std::string config_path;
  std::string output_dir;
  std::string checkpoints;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON run config");
  cmd->add_option("--output-dir", c.output_dir, "Output directory (overrides config and VBCOM_OUTPUT_DIR)");
  cmd->add_option("--seed", c.seed, "Global seed");
  cmd->add_option("--workers", c.workers, "Worker threads");
}

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? parse_config(json::object()) : load_config(c.config_path);
  apply_env_overrides(cfg);
  if (!c.output_dir.empty()) cfg.output_dir = c.output_dir;
  if (c.seed) cfg.seed = *c.seed;
  if (c.workers) {
    if (*c.workers < 1) throw ConfigError("--workers must be >= 1");
    cfg.eval.workers = *c.workers;
    cfg.train.workers = *c.workers;
  }
  if (!c.checkpoints.empty()) cfg.eval.checkpoint_dir = c.checkpoints;
  validate(cfg);
  return cfg;
}

/// Resolves an output file inside the run's output directory.
fs::path output_path(const RunConfig& cfg, const std::string& name) {
  const fs::path root = fs::weakly_canonical(fs::absolute(cfg.output_dir));
  const fs::path p = fs::path(name).is_absolute() ? fs::path(name) : root / name;
  const fs::path canon = fs::weakly_canonical(p);
  const auto rel = canon.lexically_relative(root);
  if (rel.empty() || *rel.begin() == "..") {
    throw ConfigError("output " + p.string() + " lies outside output_dir " + root.string());
  }
  fs::create_directories(canon.parent_path());
  return canon;
}

std::string file_hash(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::uint64_t h = 1469598103934665603ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  return hash_hex(h);
}

json checkpoint_hashes(const fs::path& dir) {
  json out = json::object();
  if (!fs::exists(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".bin") {
      out[entry.path().filename().string()] = file_hash(entry.path());
    }
  }
  return out;
}

void write_manifest(const RunConfig& cfg, const std::string& command, const std::vector<std::string>& argv,
                    const json& extra) {
  json m;
  m["command"] = command;
  m["argv"] = argv;
  m["config_hash"] = hash_hex(config_hash(cfg));
  m["seed"] = cfg.seed;
  m["config"] = to_json(cfg);
  m["checkpoints"] = checkpoint_hashes(checkpoint_dir(cfg));
  for (const auto& [k, v] : extra.items()) m[k] = v;
  const fs::path path = output_path(cfg, "manifest_" + command + ".json");
  std::ofstream(path) << m.dump(2) << "\n";
}

std::vector<PolicyKind> kinds_for(const std::string& kind) {
  if (kind == "all") return {PolicyKind::Vision, PolicyKind::Blind, PolicyKind::NoisyPerceptive};
  return {policy_kind_from_string(kind)};
}

int cmd_train(const Common& common, const std::string& kind, std::optional<int> updates,
              const std::vector<std::string>& argv) {
  RunConfig cfg = resolve_config(common);
  if (updates) cfg.train.updates = *updates;
  validate(cfg);
  const fs::path dir = output_path(cfg, "checkpoints");
  json runs = json::array();
  const TrainSetup setup = train_setup(cfg);
  for (PolicyKind k : kinds_for(kind)) {
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult res = train_policy(k, setup, derive_seed(cfg.seed, {static_cast<std::uint64_t>(k) + 1}), dir,
                                         [&](const CurveRow& row) {
                                           std::fprintf(stderr,
                                                        "[%s] update %d reward %.3f goals %.2f fall %.2f level %.2f\n",
                                                        to_string(k).c_str(), row.update, row.mean_episode_reward,
                                                        row.mean_goals, row.fall_rate, row.terrain_level);
                                         });
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    runs.push_back({{"kind", to_string(k)},
                    {"updates", res.curve.size()},
                    {"halted", res.halted},
                    {"halt_reason", res.halt_reason},
                    {"seconds", secs}});
    if (res.halted) std::cerr << "training of " << to_string(k) << " halted: " << res.halt_reason << "\n";
  }
  write_manifest(cfg, "train", argv, {{"runs", runs}});
  return 0;
}

std::vector<Method> methods_of(const RunConfig& cfg) {
  std::vector<Method> out;
  for (const auto& m : cfg.eval.methods) out.push_back(method_from_string(m));
  return out;
}

int cmd_eval(const Common& common, const std::string& suite, const std::string& out,
             const std::vector<std::string>& methods, const std::vector<std::string>& noise,
             const std::vector<std::string>& argv) {
  RunConfig cfg = resolve_config(common);
  if (!methods.empty()) cfg.eval.methods = methods;
  if (!noise.empty()) cfg.noise.eval_grid = noise;
  validate(cfg);
  SuiteConfig sc = suite_config(cfg);
  if (suite == "full") {
    if (noise.empty()) sc.noise_grid = full_noise_grid();
  } else if (suite != "table2") {
    throw ConfigError("--suite must be 'table2' or 'full'");
  }
  const fs::path path = output_path(cfg, out);
  const PolicySet policies = load_policies(checkpoint_dir(cfg), methods_of(cfg));
  const std::vector<MetricRow> rows = run_suite(sc, policies, cfg.terrain, cfg.env, cfg.composer);
  std::ofstream os(path);
  write_suite_csv(os, rows, {config_hash(cfg), cfg.seed});
  write_suite_csv(std::cout, rows, {config_hash(cfg), cfg.seed});
  write_manifest(cfg, "eval", argv, {{"outputs", {path.string()}}, {"suite", suite}});
  return 0;
}

int cmd_ablate(const Common& common, const std::string& kind, const std::string& out,
               const std::vector<std::string>& argv) {
  RunConfig cfg = resolve_config(common);
  const AblationKind ak = ablation_kind_from_string(kind);
  const fs::path path = output_path(cfg, out.empty() ? "ablation_" + to_string(ak) + ".csv" : out);
  const PolicySet policies = load_policies(checkpoint_dir(cfg), {Method::VbCom});
  const std::vector<MetricRow> rows =
      run_ablations(ablation_config(cfg, ak), policies, train_setup(cfg), cfg.composer);
  std::ofstream os(path);
  write_ablation_csv(os, rows, {config_hash(cfg), cfg.seed});
  write_ablation_csv(std::cout, rows, {config_hash(cfg), cfg.seed});
  write_manifest(cfg, "ablate", argv, {{"outputs", {path.string()}}, {"kind", to_string(ak)}});
  return 0;
}

int cmd_trace(const Common& common, const std::string& noise, int episode, std::optional<int> level,
              const std::string& out, const std::vector<std::string>& argv) {
  RunConfig cfg = resolve_config(common);
  if (!noise.empty()) cfg.noise.trace = noise;
  validate(cfg);
  const fs::path path = output_path(cfg, out);
  const PolicySet policies = load_policies(checkpoint_dir(cfg), {Method::VbCom});
  auto controller = make_factory(Method::VbCom, policies, cfg.composer)();
  auto* composite = dynamic_cast<CompositeController*>(controller.get());
  const int lvl = level.value_or(cfg.eval.level < 0 ? cfg.terrain.tl_max : cfg.eval.level);
  const TerrainProfile profile = suite_profile(cfg.terrain, lvl, cfg.seed, 0, episode);
  const std::vector<TraceRow> rows = trace_episode(*composite, profile, parse_noise_spec(cfg.noise.trace),
                                                   suite_episode_seed(cfg.seed, 0, episode), cfg.env);
  std::ofstream os(path);
  write_trace_csv(os, rows, {config_hash(cfg), cfg.seed});
  const auto latency = switch_latency_after_contact(rows);
  std::cout << "trace: " << rows.size() << " steps, goals " << (rows.empty() ? 0 : rows.back().goal_index)
            << ", vision-to-blind after first contact: "
            << (latency ? std::to_string(*latency) + " steps" : std::string("none")) << "\n"
            << "written " << path.string() << "\n";
  write_manifest(cfg, "trace", argv,
                 {{"outputs", {path.string()}}, {"episode", episode}, {"level", lvl}, {"noise", cfg.noise.trace}});
  return 0;
}

int cmd_selftest(std::uint64_t seed) {
  bool ok = true;
  for (const auto& c : oracles::run_all(seed)) {
    std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
    ok = ok && c.pass;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vision/blind policy composition workbench"};
  app.require_subcommand(1);
  std::vector<std::string> args(argv, argv + argc);

  Common common;
  std::string kind = "all";
  std::optional<int> updates;
  auto* train = app.add_subcommand("train", "Train vision, blind or noisy-perceptive policies");
  add_common(train, common);
  train->add_option("--kind", kind, "vision | blind | noisy_perceptive | all");
  train->add_option("--updates", updates, "PPO updates per policy");

  std::string suite = "table2";
  std::string eval_out = "metrics.csv";
  std::vector<std::string> methods, noise_grid;
  auto* eval = app.add_subcommand("eval", "Run the evaluation suite");
  add_common(eval, common);
  eval->add_option("--suite", suite, "table2 (forward shift grid) | full (all noise kinds)");
  eval->add_option("--checkpoints", common.checkpoints, "Checkpoint directory");
  eval->add_option("--out", eval_out, "CSV path inside the output directory");
  eval->add_option("--methods", methods, "Subset of vbcom, vision, blind, noisy_perceptive");
  eval->add_option("--noise", noise_grid, "Noise cells such as shift:0.7");

  std::string ablation = "alpha";
  std::string ablate_out;
  auto* ablate = app.add_subcommand("ablate", "Switch period, threshold or estimator ablations");
  add_common(ablate, common);
  ablate->add_option("--kind", ablation, "alpha | period | estimator");
  ablate->add_option("--checkpoints", common.checkpoints, "Checkpoint directory");
  ablate->add_option("--out", ablate_out, "CSV path inside the output directory");

  std::string trace_noise;
  std::string trace_out = "trace.csv";
  int episode = 0;
  std::optional<int> level;
  auto* trace = app.add_subcommand("trace", "Per-step composer trace of one episode");
  add_common(trace, common);
  trace->add_option("--noise", trace_noise, "Noise spec, e.g. shift:1.0");
  trace->add_option("--episode", episode, "Episode index within the seeded suite");
  trace->add_option("--level", level, "Terrain level (default: maximum)");
  trace->add_option("--checkpoints", common.checkpoints, "Checkpoint directory");
  trace->add_option("--out", trace_out, "CSV path inside the output directory");

  std::uint64_t selftest_seed = 7;
  auto* selftest = app.add_subcommand("selftest", "Run the oracle suites");
  selftest->add_option("--seed", selftest_seed, "Oracle seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (*train) return cmd_train(common, kind, updates, args);
    if (*eval) return cmd_eval(common, suite, eval_out, methods, noise_grid, args);
    if (*ablate) return cmd_ablate(common, ablation, ablate_out, args);
    if (*trace) return cmd_trace(common, trace_noise, episode, level, trace_out, args);
    if (*selftest) return cmd_selftest(selftest_seed);
  } catch (const MissingCheckpoint& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << app.help();
  return 2;
}
