#pragma once

#include <cstddef>
#include <deque>
#include <random>
#include <string>
#include <vector>

namespace vbcom {

/// Row-major height grid: `rows` cells along travel (row 0 nearest the back edge),
/// `cols` cells across travel (col 0 on the right, negative y).
struct HeightMap {
  int rows = 0;
  int cols = 0;
  std::vector<double> cells;

  HeightMap() = default;
  HeightMap(int r, int c, double fill = 0.0) : rows(r), cols(c), cells(static_cast<std::size_t>(r) * c, fill) {}

  double& at(int r, int c) { return cells[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return cells[static_cast<std::size_t>(r) * cols + c]; }
  std::size_t size() const { return cells.size(); }
  bool operator==(const HeightMap&) const = default;
};

enum class NoiseKind { None, GaussianAdd, ShiftForward, ShiftLateral, Float, Delay, Zero };

std::string to_string(NoiseKind kind);
NoiseKind noise_kind_from_string(const std::string& name);

/// Evaluation-time perception corruption. `level` is a fraction for Gaussian/Shift,
/// a fraction of the 0.5 m float range for Float, and seconds for Delay.
struct NoiseSpec {
  NoiseKind kind = NoiseKind::None;
  double level = 0.0;
  std::uint64_t stream = 0;
};

void validate(const NoiseSpec& spec);

/// "kind:level", e.g. "shift:1.0", "gaussian:0.3", "float:0.5", "delay:0.2", "zero", "none".
NoiseSpec parse_noise_spec(const std::string& text);
std::string describe(const NoiseSpec& spec);

inline constexpr double kNoiseSigmaMax = 0.5;     // [m] at level 1
inline constexpr double kFloatRange = 0.5;        // [m] at level 1
inline constexpr double kMaxTrainingDelay = 0.5;  // [s]
inline constexpr double kTrainingGaussianLevel = 0.1;

enum class ShiftDirection { Forward, Lateral };
enum class LateralSide { Right, Left };

HeightMap apply_gaussian(HeightMap map, double level, std::mt19937_64& rng);

/// Replaces a band of floor(level * axis_cells) rows (forward, from the far edge) or columns
/// (lateral, from `side`) with N(0, sigma_max) samples.
HeightMap apply_shift(HeightMap map, ShiftDirection direction, double level, LateralSide side,
                      std::mt19937_64& rng);

HeightMap apply_float(HeightMap map, double offset);

/// Ring buffer of recent perception frames, newest last.
class DelayBuffer {
 public:
  DelayBuffer(double dt, double max_delay = kMaxTrainingDelay);

  void push(const HeightMap& map);
  void clear() { frames_.clear(); }
  bool empty() const { return frames_.empty(); }
  std::size_t size() const { return frames_.size(); }
  std::size_t capacity() const { return capacity_; }
  double dt() const { return dt_; }

  /// Frame whose age is closest to `delay` (clamped to the oldest stored frame).
  const HeightMap& delayed(double delay) const;

 private:
  double dt_;
  std::size_t capacity_;
  std::deque<HeightMap> frames_;
};

/// Stale frame as-is; `current` when the buffer is empty.
HeightMap apply_delay(const DelayBuffer& buffer, double delay, const HeightMap& current);

/// Training-time corruption: random delay in [0, 0.5] s then 10% Gaussian noise.
HeightMap training_noise_pipeline(const HeightMap& current, const DelayBuffer& buffer, std::mt19937_64& rng,
                                  bool enabled = true);

/// Per-episode state of an evaluation noise channel.
class NoiseChannel {
 public:
  NoiseChannel() = default;
  NoiseChannel(NoiseSpec spec, std::uint64_t episode_seed);

  const NoiseSpec& spec() const { return spec_; }
  HeightMap apply(const HeightMap& current, const DelayBuffer& buffer, std::mt19937_64& rng) const;

 private:
  NoiseSpec spec_;
  LateralSide side_ = LateralSide::Right;
  double float_sign_ = 1.0;
};

}  // namespace vbcom
