#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vbcom/artifact.hpp"
#include "vbcom/composer.hpp"
#include "vbcom/env.hpp"
#include "vbcom/eval.hpp"
#include "vbcom/noise.hpp"
#include "vbcom/rl.hpp"
#include "vbcom/terrain.hpp"

namespace vbcom {

/// Raised for unknown keys, type mismatches and out-of-range values; the message names the key path.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct NoiseConfig {
  std::vector<std::string> eval_grid{"shift:0", "shift:0.3", "shift:0.7", "shift:1.0"};
  std::string ablation = "shift:1.0";
  std::string trace = "shift:1.0";
};

struct EvalConfig {
  std::vector<std::string> methods{"vbcom", "vision", "blind", "noisy_perceptive"};
  int episodes = 10;
  int repeats = 3;
  int level = -1;  // -1 is the maximum terrain level
  int workers = 1;
  std::string checkpoint_dir;  // empty means <output_dir>/checkpoints
  std::vector<int> periods{100, 50, 5, 1};
  std::vector<std::optional<double>> alphas{2.0, 0.5, 0.1, std::nullopt};
  int estimator_rounds = 40;
  int trace_episodes = 10;
};

struct RunConfig {
  TerrainConfig terrain;
  EnvConfig env;
  NoiseConfig noise;
  ApproximatorConfig approximator;
  PpoConfig ppo;
  ComposerConfig composer;
  EvalConfig eval;
  TrainConfig train;
  std::uint64_t seed = 0;
  std::string output_dir = "runs";
};

/// Fully defaulted and validated config. Throws ConfigError.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

/// Every field, including defaults.
nlohmann::json to_json(const RunConfig& config);

/// FNV-1a over the canonical dump of everything except output_dir and worker counts.
std::uint64_t config_hash(const RunConfig& config);

void validate(const RunConfig& config);

/// VBCOM_OUTPUT_DIR and VBCOM_WORKERS. `getenv` is injectable for tests.
void apply_env_overrides(RunConfig& config,
                         const std::function<const char*(const char*)>& getenv = [](const char* k) {
                           return std::getenv(k);
                         });

TrainSetup train_setup(const RunConfig& config);
SuiteConfig suite_config(const RunConfig& config);
AblationConfig ablation_config(const RunConfig& config, AblationKind kind);
std::filesystem::path checkpoint_dir(const RunConfig& config);

}  // namespace vbcom
