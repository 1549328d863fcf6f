#include "vbcom/noise.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace vbcom {

std::string to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::None: return "none";
    case NoiseKind::GaussianAdd: return "gaussian";
    case NoiseKind::ShiftForward: return "shift";
    case NoiseKind::ShiftLateral: return "lateral";
    case NoiseKind::Float: return "float";
    case NoiseKind::Delay: return "delay";
    case NoiseKind::Zero: return "zero";
  }
  return "none";
}

NoiseKind noise_kind_from_string(const std::string& name) {
  if (name == "none") return NoiseKind::None;
  if (name == "gaussian") return NoiseKind::GaussianAdd;
  if (name == "shift" || name == "shift_forward" || name == "forward") return NoiseKind::ShiftForward;
  if (name == "lateral" || name == "shift_lateral") return NoiseKind::ShiftLateral;
  if (name == "float") return NoiseKind::Float;
  if (name == "delay") return NoiseKind::Delay;
  if (name == "zero") return NoiseKind::Zero;
  throw std::invalid_argument("unknown noise kind '" + name + "'");
}

void validate(const NoiseSpec& spec) {
  switch (spec.kind) {
    case NoiseKind::None:
    case NoiseKind::Zero: return;
    case NoiseKind::Delay:
      if (spec.level < 0.0 || spec.level > kMaxTrainingDelay) {
        throw std::invalid_argument("delay noise must lie in [0, 0.5] s");
      }
      return;
    default:
      if (spec.level < 0.0 || spec.level > 1.0) throw std::invalid_argument("noise level must lie in [0, 1]");
  }
}

NoiseSpec parse_noise_spec(const std::string& text) {
  NoiseSpec spec;
  const auto colon = text.find(':');
  spec.kind = noise_kind_from_string(text.substr(0, colon));
  if (colon != std::string::npos) spec.level = std::stod(text.substr(colon + 1));
  validate(spec);
  return spec;
}

std::string describe(const NoiseSpec& spec) {
  std::ostringstream os;
  os << to_string(spec.kind) << ':' << spec.level;
  return os.str();
}

HeightMap apply_gaussian(HeightMap map, double level, std::mt19937_64& rng) {
  if (level == 0.0) return map;
  std::normal_distribution<double> noise(0.0, level * kNoiseSigmaMax);
  for (auto& c : map.cells) c += noise(rng);
  return map;
}

HeightMap apply_shift(HeightMap map, ShiftDirection direction, double level, LateralSide side,
                      std::mt19937_64& rng) {
  if (level == 0.0) return map;
  std::normal_distribution<double> noise(0.0, kNoiseSigmaMax);
  if (direction == ShiftDirection::Forward) {
    const int band = std::min(map.rows, static_cast<int>(std::floor(level * map.rows + 1e-9)));
    for (int r = map.rows - band; r < map.rows; ++r) {
      for (int c = 0; c < map.cols; ++c) map.at(r, c) = noise(rng);
    }
  } else {
    const int band = std::min(map.cols, static_cast<int>(std::floor(level * map.cols + 1e-9)));
    const int first = side == LateralSide::Right ? 0 : map.cols - band;
    for (int r = 0; r < map.rows; ++r) {
      for (int c = first; c < first + band; ++c) map.at(r, c) = noise(rng);
    }
  }
  return map;
}

HeightMap apply_float(HeightMap map, double offset) {
  if (offset == 0.0) return map;
  for (auto& c : map.cells) c += offset;
  return map;
}

DelayBuffer::DelayBuffer(double dt, double max_delay)
    : dt_(dt), capacity_(static_cast<std::size_t>(std::ceil(max_delay / dt - 1e-9)) + 1) {
  if (dt <= 0.0) throw std::invalid_argument("delay buffer needs dt > 0");
}

void DelayBuffer::push(const HeightMap& map) {
  frames_.push_back(map);
  while (frames_.size() > capacity_) frames_.pop_front();
}

const HeightMap& DelayBuffer::delayed(double delay) const {
  const auto steps = static_cast<std::size_t>(std::llround(std::max(0.0, delay) / dt_));
  const std::size_t back = std::min(steps, frames_.size() - 1);
  return frames_[frames_.size() - 1 - back];
}

HeightMap apply_delay(const DelayBuffer& buffer, double delay, const HeightMap& current) {
  if (buffer.empty() || delay == 0.0) return current;
  return buffer.delayed(delay);
}

HeightMap training_noise_pipeline(const HeightMap& current, const DelayBuffer& buffer, std::mt19937_64& rng,
                                  bool enabled) {
  if (!enabled) return current;
  const double delay = std::uniform_real_distribution<double>(0.0, kMaxTrainingDelay)(rng);
  return apply_gaussian(apply_delay(buffer, delay, current), kTrainingGaussianLevel, rng);
}

NoiseChannel::NoiseChannel(NoiseSpec spec, std::uint64_t episode_seed) : spec_(spec) {
  validate(spec_);
  side_ = (episode_seed >> 1) % 2 == 0 ? LateralSide::Right : LateralSide::Left;
  float_sign_ = episode_seed % 2 == 0 ? 1.0 : -1.0;
}

HeightMap NoiseChannel::apply(const HeightMap& current, const DelayBuffer& buffer, std::mt19937_64& rng) const {
  switch (spec_.kind) {
    case NoiseKind::None: return current;
    case NoiseKind::GaussianAdd: return apply_gaussian(current, spec_.level, rng);
    case NoiseKind::ShiftForward: return apply_shift(current, ShiftDirection::Forward, spec_.level, side_, rng);
    case NoiseKind::ShiftLateral: return apply_shift(current, ShiftDirection::Lateral, spec_.level, side_, rng);
    case NoiseKind::Float: return apply_float(current, float_sign_ * spec_.level * kFloatRange);
    case NoiseKind::Delay: return apply_delay(buffer, spec_.level, current);
    case NoiseKind::Zero: return HeightMap(current.rows, current.cols, 0.0);
  }
  return current;
}

}  // namespace vbcom
