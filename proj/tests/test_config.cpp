#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "vbcom/config.hpp"

using namespace vbcom;
using nlohmann::json;

namespace {

std::string error_of(const json& j) {
  try {
    parse_config(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, EmptyObjectGivesDefaults) {
  const RunConfig c = parse_config(json::object());
  EXPECT_EQ(c.composer.switch_period, ComposerConfig{}.switch_period);
  EXPECT_EQ(c.env.dt, EnvConfig{}.dt);
  EXPECT_EQ(c.eval.episodes, 10);
  EXPECT_EQ(c.eval.repeats, 3);
  EXPECT_EQ(c.seed, 0u);
  EXPECT_EQ(c.noise.eval_grid.size(), 4u);
}

TEST(Config, OverridesApply) {
  const RunConfig c = parse_config(json::parse(R"({"composer": {"T": 5, "alpha_threshold": null}, "seed": 9})"));
  EXPECT_EQ(c.composer.switch_period, 5);
  EXPECT_FALSE(c.composer.alpha_threshold.has_value());
  EXPECT_EQ(c.seed, 9u);
}

TEST(Config, InvalidValueNamesTheKey) {
  EXPECT_NE(error_of(json::parse(R"({"composer": {"T": 0}})")).find("composer.T"), std::string::npos);
}

TEST(Config, UnknownKeyRejected) {
  EXPECT_NE(error_of(json::parse(R"({"composer": {"tau": 1}})")).find("unknown key 'composer.tau'"),
            std::string::npos);
  EXPECT_NE(error_of(json::parse(R"({"bogus": 1})")).find("bogus"), std::string::npos);
}

TEST(Config, TypeErrorsNameKeyAndType) {
  EXPECT_NE(error_of(json::parse(R"({"env": {"dt": "fast"}})")).find("env.dt must be a number, got string"),
            std::string::npos);
  EXPECT_NE(error_of(json::parse(R"({"noise": {"eval_grid": ["shift:0", 3]}})")).find("noise.eval_grid[1]"),
            std::string::npos);
}

TEST(Config, BadNoiseSpecRejected) {
  EXPECT_FALSE(error_of(json::parse(R"({"noise": {"trace": "shift:7"}})")).empty());
}

TEST(Config, StartLevelWithinCurriculum) {
  EXPECT_NE(error_of(json::parse(R"({"train": {"start_level": 99}})")).find("train.start_level"),
            std::string::npos);
}

TEST(Config, RoundTripThroughJson) {
  const RunConfig a = parse_config(json::parse(R"({"composer": {"T": 7}, "eval": {"episodes": 4}})"));
  const RunConfig b = parse_config(to_json(a));
  EXPECT_EQ(to_json(a), to_json(b));
  EXPECT_EQ(config_hash(a), config_hash(b));
}

TEST(ConfigHash, StableUnderKeyOrder) {
  const json a = json::parse(R"({"seed": 3, "composer": {"T": 10, "window": 4}})");
  const json b = json::parse(R"({"composer": {"window": 4, "T": 10}, "seed": 3})");
  EXPECT_EQ(config_hash(parse_config(a)), config_hash(parse_config(b)));
}

TEST(ConfigHash, SensitiveToSubstanceNotLocation) {
  RunConfig a = parse_config(json::object());
  RunConfig b = a;
  b.output_dir = "elsewhere";
  b.eval.workers = 4;
  b.train.workers = 4;
  b.eval.checkpoint_dir = "ckpt";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.composer.switch_period = 51;
  EXPECT_NE(config_hash(a), config_hash(b));
  RunConfig c = a;
  c.seed = 1;
  EXPECT_NE(config_hash(a), config_hash(c));
}

TEST(EnvOverrides, OutputDirAndWorkers) {
  RunConfig c = parse_config(json::object());
  const auto env = [](const char* k) -> const char* {
    if (std::strcmp(k, "VBCOM_OUTPUT_DIR") == 0) return "/tmp/out";
    if (std::strcmp(k, "VBCOM_WORKERS") == 0) return "3";
    return nullptr;
  };
  apply_env_overrides(c, env);
  EXPECT_EQ(c.output_dir, "/tmp/out");
  EXPECT_EQ(c.eval.workers, 3);
  EXPECT_EQ(c.train.workers, 3);
}

TEST(EnvOverrides, IgnoresOtherVariablesAndRejectsBadWorkers) {
  RunConfig c = parse_config(json::object());
  const RunConfig before = c;
  apply_env_overrides(c, [](const char*) -> const char* { return nullptr; });
  EXPECT_EQ(to_json(c), to_json(before));
  EXPECT_THROW(apply_env_overrides(c, [](const char* k) -> const char* {
                 return std::strcmp(k, "VBCOM_WORKERS") == 0 ? "two" : nullptr;
               }),
               ConfigError);
}

TEST(Derived, SetupsCarryHashAndDefaults) {
  RunConfig c = parse_config(json::parse(R"({"eval": {"episodes": 2, "repeats": 1}})"));
  EXPECT_EQ(train_setup(c).config_hash, config_hash(c));
  const SuiteConfig s = suite_config(c);
  EXPECT_EQ(s.episodes, 2);
  EXPECT_EQ(s.repeats, 1);
  EXPECT_EQ(s.noise_grid.size(), 4u);
  const AblationConfig a = ablation_config(c, AblationKind::SwitchPeriod);
  EXPECT_EQ(a.periods, (std::vector<int>{100, 50, 5, 1}));
  EXPECT_EQ(checkpoint_dir(c), std::filesystem::path("runs") / "checkpoints");
}

TEST(LoadConfig, FileAndMissingFile) {
  const auto path = std::filesystem::temp_directory_path() / "vbcom_test_config.json";
  {
    std::ofstream out(path);
    out << R"({"seed": 12})";
  }
  EXPECT_EQ(load_config(path).seed, 12u);
  std::filesystem::remove(path);
  EXPECT_THROW(load_config(path), ConfigError);
}
