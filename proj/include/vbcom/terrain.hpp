#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

namespace vbcom {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

enum class ObstacleKind { Gap, Hurdle, Wall, Flat };

std::string to_string(ObstacleKind kind);
ObstacleKind obstacle_kind_from_string(const std::string& name);

/// One track feature. Gaps and hurdles span the corridor; walls are posts that must be avoided.
struct ObstacleSpec {
  ObstacleKind kind = ObstacleKind::Flat;
  double x_start = 0.0;         // near edge along the track [m]
  double extent_forward = 0.0;  // size along travel [m]
  double extent_lateral = 0.0;  // size across travel [m]
  double height = 0.0;          // gap depth (<0) or hurdle/wall height (>0) [m]
  double lateral_center = 0.0;  // [m]

  double x_end() const { return x_start + extent_forward; }
  bool contains(double x, double y) const;
};

inline constexpr int kNumGoals = 8;

struct TerrainProfile {
  std::vector<ObstacleSpec> obstacles;
  std::array<Vec2, kNumGoals> waypoints{};
  double track_length = 0.0;
  double half_width = 0.0;
  int terrain_level = 0;
  std::uint64_t seed = 0;
};

struct ObstacleMix {
  double gap = 1.0;
  double hurdle = 1.0;
  double wall = 1.0;
  double flat = 0.0;
};

struct TerrainConfig {
  double track_length = 40.0;
  double half_width = 2.0;
  double spacing_min = 3.0;
  double spacing_max = 4.0;
  double waypoint_offset = 1.0;
  int tl_max = 3;
  ObstacleMix mix;
};

/// Sampling interval of the difficulty axis of `kind` at continuous terrain difficulty `tl`
/// (0 = easiest, 1 = the maximum size scale). Throws on negative `tl` or Flat.
std::pair<double, double> curriculum_range(ObstacleKind kind, double tl);

/// Difficulty used for an integer terrain level.
double level_difficulty(const TerrainConfig& config, int level);

void validate(const TerrainConfig& config);

TerrainProfile generate_profile(const TerrainConfig& config, int level, std::uint64_t seed);

/// Ground-truth terrain height. Flat ground and everything off the corridor read 0.
double height_at(const TerrainProfile& profile, double x, double y);

/// Unit vector from `from` toward `to`; falls back to the heading direction when they coincide.
Vec2 goal_direction(const Vec2& to, const Vec2& from, double heading = 0.0);

nlohmann::json to_json(const TerrainProfile& profile);
TerrainProfile profile_from_json(const nlohmann::json& j);

}  // namespace vbcom
