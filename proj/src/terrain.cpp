#include "vbcom/terrain.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vbcom {

namespace {

// Size scales of the axes that are not driven by the curriculum.
constexpr double kGapDepthMin = -1.8;
constexpr double kGapDepthMax = -1.5;
constexpr double kHurdleThicknessMin = 0.1;
constexpr double kHurdleThicknessMax = 0.2;
constexpr double kWallThicknessMin = 0.2;
constexpr double kWallThicknessMax = 0.4;
constexpr double kWallHeightMin = 1.4;
constexpr double kWallHeightMax = 1.8;
constexpr double kWallLateralJitter = 0.25;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double max_forward_extent(const TerrainConfig& config, int level) {
  const double tl = level_difficulty(config, level);
  double extent = 0.0;
  if (config.mix.gap > 0.0) extent = std::max(extent, curriculum_range(ObstacleKind::Gap, tl).second);
  if (config.mix.hurdle > 0.0) extent = std::max(extent, kHurdleThicknessMax);
  if (config.mix.wall > 0.0) extent = std::max(extent, kWallThicknessMax);
  return extent;
}

}  // namespace

std::string to_string(ObstacleKind kind) {
  switch (kind) {
    case ObstacleKind::Gap: return "gap";
    case ObstacleKind::Hurdle: return "hurdle";
    case ObstacleKind::Wall: return "wall";
    case ObstacleKind::Flat: return "flat";
  }
  return "flat";
}

ObstacleKind obstacle_kind_from_string(const std::string& name) {
  if (name == "gap") return ObstacleKind::Gap;
  if (name == "hurdle") return ObstacleKind::Hurdle;
  if (name == "wall") return ObstacleKind::Wall;
  if (name == "flat") return ObstacleKind::Flat;
  throw std::invalid_argument("unknown obstacle kind '" + name + "'");
}

bool ObstacleSpec::contains(double x, double y) const {
  if (kind == ObstacleKind::Flat) return false;
  const double half = 0.5 * extent_lateral;
  return x >= x_start && x < x_end() && y >= lateral_center - half && y < lateral_center + half;
}

std::pair<double, double> curriculum_range(ObstacleKind kind, double tl) {
  if (!(tl >= 0.0)) throw std::invalid_argument("terrain level must be non-negative");
  switch (kind) {
    case ObstacleKind::Gap: return {0.1 + 0.5 * tl, 0.2 + 0.6 * tl};
    case ObstacleKind::Hurdle:
    case ObstacleKind::Wall: return {0.1 + 0.1 * tl, 0.2 + 0.2 * tl};
    case ObstacleKind::Flat: break;
  }
  throw std::invalid_argument("flat terrain has no curriculum range");
}

double level_difficulty(const TerrainConfig& config, int level) {
  if (level < 0) throw std::invalid_argument("terrain level must be non-negative");
  if (config.tl_max <= 0) return 0.0;
  return static_cast<double>(std::min(level, config.tl_max)) / config.tl_max;
}

void validate(const TerrainConfig& config) {
  if (config.tl_max < 0) throw std::invalid_argument("terrain.tl_max must be >= 0");
  if (config.half_width <= 0.0) throw std::invalid_argument("terrain.half_width must be > 0");
  if (config.spacing_min <= 0.0 || config.spacing_max < config.spacing_min) {
    throw std::invalid_argument("terrain spacing bounds must satisfy 0 < spacing_min <= spacing_max");
  }
  const double w = config.mix.gap + config.mix.hurdle + config.mix.wall + config.mix.flat;
  if (config.mix.gap < 0 || config.mix.hurdle < 0 || config.mix.wall < 0 || config.mix.flat < 0 || w <= 0.0) {
    throw std::invalid_argument("terrain.mix weights must be non-negative with a positive sum");
  }
  const double needed =
      kNumGoals * (config.spacing_max + max_forward_extent(config, config.tl_max)) + config.waypoint_offset;
  if (needed > config.track_length) {
    throw std::invalid_argument("terrain.track_length " + std::to_string(config.track_length) +
                                " m cannot fit 8 obstacles (needs " + std::to_string(needed) + " m)");
  }
}

TerrainProfile generate_profile(const TerrainConfig& config, int level, std::uint64_t seed) {
  validate(config);
  if (level < 0 || level > config.tl_max) {
    throw std::invalid_argument("terrain level " + std::to_string(level) + " outside [0, tl_max]");
  }
  std::mt19937_64 rng(seed);
  std::discrete_distribution<int> pick_kind({config.mix.gap, config.mix.hurdle, config.mix.wall, config.mix.flat});
  const double tl = level_difficulty(config, level);

  TerrainProfile profile;
  profile.track_length = config.track_length;
  profile.half_width = config.half_width;
  profile.terrain_level = level;
  profile.seed = seed;

  double cursor = 0.0;
  for (int i = 0; i < kNumGoals; ++i) {
    ObstacleSpec ob;
    ob.kind = static_cast<ObstacleKind>(pick_kind(rng));
    ob.x_start = cursor + uniform(rng, config.spacing_min, config.spacing_max);
    switch (ob.kind) {
      case ObstacleKind::Gap: {
        const auto [lo, hi] = curriculum_range(ObstacleKind::Gap, tl);
        ob.extent_forward = uniform(rng, lo, hi);
        ob.extent_lateral = 2.0 * config.half_width;
        ob.height = uniform(rng, kGapDepthMin, kGapDepthMax);
        break;
      }
      case ObstacleKind::Hurdle: {
        const auto [lo, hi] = curriculum_range(ObstacleKind::Hurdle, tl);
        ob.extent_forward = uniform(rng, kHurdleThicknessMin, kHurdleThicknessMax);
        ob.extent_lateral = 2.0 * config.half_width;
        ob.height = uniform(rng, lo, hi);
        break;
      }
      case ObstacleKind::Wall: {
        const auto [lo, hi] = curriculum_range(ObstacleKind::Wall, tl);
        ob.extent_forward = uniform(rng, kWallThicknessMin, kWallThicknessMax);
        ob.extent_lateral = uniform(rng, lo, hi);
        ob.height = uniform(rng, kWallHeightMin, kWallHeightMax);
        ob.lateral_center = uniform(rng, -kWallLateralJitter, kWallLateralJitter);
        break;
      }
      case ObstacleKind::Flat: break;
    }
    // Walls put the goal straight behind them so the direct line is blocked.
    const double goal_y = ob.kind == ObstacleKind::Wall ? ob.lateral_center : 0.0;
    profile.waypoints[i] = Vec2{ob.x_end() + config.waypoint_offset, goal_y};
    cursor = ob.x_end();
    profile.obstacles.push_back(ob);
  }
  return profile;
}

double height_at(const TerrainProfile& profile, double x, double y) {
  for (const auto& ob : profile.obstacles) {
    if (ob.contains(x, y)) return ob.height;
  }
  return 0.0;
}

Vec2 goal_direction(const Vec2& to, const Vec2& from, double heading) {
  const double dx = to.x - from.x;
  const double dy = to.y - from.y;
  const double n = std::hypot(dx, dy);
  if (n < 1e-12) return Vec2{std::cos(heading), std::sin(heading)};
  return Vec2{dx / n, dy / n};
}

nlohmann::json to_json(const TerrainProfile& profile) {
  nlohmann::json j;
  j["track_length"] = profile.track_length;
  j["half_width"] = profile.half_width;
  j["terrain_level"] = profile.terrain_level;
  j["seed"] = profile.seed;
  auto& obs = j["obstacles"] = nlohmann::json::array();
  for (const auto& ob : profile.obstacles) {
    obs.push_back({{"kind", to_string(ob.kind)},
                   {"x_start", ob.x_start},
                   {"extent_forward", ob.extent_forward},
                   {"extent_lateral", ob.extent_lateral},
                   {"height", ob.height},
                   {"lateral_center", ob.lateral_center}});
  }
  auto& wps = j["waypoints"] = nlohmann::json::array();
  for (const auto& p : profile.waypoints) wps.push_back({p.x, p.y});
  return j;
}

TerrainProfile profile_from_json(const nlohmann::json& j) {
  TerrainProfile profile;
  profile.track_length = j.at("track_length").get<double>();
  profile.half_width = j.at("half_width").get<double>();
  profile.terrain_level = j.at("terrain_level").get<int>();
  profile.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& o : j.at("obstacles")) {
    ObstacleSpec ob;
    ob.kind = obstacle_kind_from_string(o.at("kind").get<std::string>());
    ob.x_start = o.at("x_start").get<double>();
    ob.extent_forward = o.at("extent_forward").get<double>();
    ob.extent_lateral = o.at("extent_lateral").get<double>();
    ob.height = o.at("height").get<double>();
    ob.lateral_center = o.at("lateral_center").get<double>();
    profile.obstacles.push_back(ob);
  }
  const auto& wps = j.at("waypoints");
  if (wps.size() != kNumGoals) throw std::invalid_argument("profile must carry exactly 8 waypoints");
  for (std::size_t i = 0; i < kNumGoals; ++i) profile.waypoints[i] = Vec2{wps[i][0].get<double>(), wps[i][1].get<double>()};
  return profile;
}

}  // namespace vbcom
