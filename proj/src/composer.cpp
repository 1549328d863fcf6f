#include "vbcom/composer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace vbcom {

std::string to_string(Selector selector) { return selector == Selector::Threshold ? "threshold" : "softmax"; }

std::string to_string(EstimatorTarget target) { return target == EstimatorTarget::TdLambda ? "td_lambda" : "mc"; }

void validate(const ComposerConfig& c) {
  if (c.switch_period < 1) throw std::invalid_argument("composer.T must be >= 1");
  if (!(c.lambda_ret >= 0.0 && c.lambda_ret < 1.0)) throw std::invalid_argument("composer.lambda_ret must be in [0, 1)");
  if (c.alpha_threshold && !(*c.alpha_threshold >= 0.0)) {
    throw std::invalid_argument("composer.alpha_threshold must be >= 0");
  }
  if (c.smoothing_window < 1) throw std::invalid_argument("composer.window must be >= 1");
  if (!(c.v_lock > 0.0)) throw std::invalid_argument("composer.v_lock must be > 0");
  if (!(c.softmax_temperature > 0.0)) throw std::invalid_argument("composer.softmax_temperature must be > 0");
}

std::vector<double> lambda_return_targets(std::span<const double> returns, int period, double lambda,
                                          bool normalized) {
  if (returns.empty()) throw std::invalid_argument("lambda-return targets need a non-empty sequence");
  if (period < 0) throw std::invalid_argument("switch period must be non-negative");
  const std::size_t n = returns.size();
  std::vector<double> out(n);
  const double norm = normalized ? 1.0 / (1.0 - std::pow(lambda, period + 1)) : 1.0;
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t end = std::min(n, t + static_cast<std::size_t>(period) + 1);
    double acc = 0.0;
    double w = 1.0;
    for (std::size_t k = t; k < end; ++k) {
      acc += w * returns[k];
      w *= lambda;
    }
    out[t] = (1.0 - lambda) * acc * norm;
  }
  if (normalized && lambda == 0.0) {
    for (std::size_t t = 0; t < n; ++t) out[t] = returns[t];
  }
  return out;
}

std::vector<double> mc_return_targets(std::span<const double> rewards, double gamma, int period) {
  if (period < 0) throw std::invalid_argument("switch period must be non-negative");
  const std::size_t n = rewards.size();
  std::vector<double> out(n);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t end = std::min(n, t + static_cast<std::size_t>(period) + 1);
    double acc = 0.0;
    double w = 1.0;
    for (std::size_t k = t; k < end; ++k) {
      acc += w * rewards[k];
      w *= gamma;
    }
    out[t] = acc;
  }
  return out;
}

EstimatorDataset return_estimator_dataset(const RolloutBuffer& buffer, const ComposerConfig& config,
                                          EstimatorTarget target, double gamma) {
  if (!buffer.finalized) throw std::logic_error("return estimator needs a finalized buffer");
  EstimatorDataset data;
  const std::size_t period = static_cast<std::size_t>(config.switch_period);
  for (int e = 0; e < buffer.num_envs; ++e) {
    int start = 0;
    while (start < buffer.horizon) {
      int stop = start;
      while (stop + 1 < buffer.horizon && !buffer.episode_end[buffer.index(e, stop)]) ++stop;
      const std::size_t off = static_cast<std::size_t>(buffer.index(e, start));
      const std::size_t len = static_cast<std::size_t>(stop - start + 1);
      const bool closed = buffer.episode_end[buffer.index(e, stop)] != 0;
      const std::vector<double> targets =
          target == EstimatorTarget::TdLambda
              ? lambda_return_targets(std::span(buffer.returns).subspan(off, len), config.switch_period,
                                      config.lambda_ret, config.normalized_targets)
              : mc_return_targets(std::span(buffer.rewards).subspan(off, len), gamma, config.switch_period);
      for (std::size_t t = 0; t < len; ++t) {
        if (!closed && t + period >= len) break;
        data.anchors.push_back(static_cast<int>(off + t));
        data.targets.push_back(targets[t]);
      }
      start = stop + 1;
    }
  }
  return data;
}

double train_return_estimator(Mlp& estimator, Adam& adam, const RolloutBuffer& buffer, const ComposerConfig& config,
                              EstimatorTarget target, double gamma, int epochs, int minibatch, std::mt19937_64& rng) {
  if (estimator.input_dim() != buffer.histories.rows()) {
    throw std::invalid_argument("return estimator input (" + std::to_string(estimator.input_dim()) +
                                ") must equal the proprio history dimension (" +
                                std::to_string(buffer.histories.rows()) + ")");
  }
  if (estimator.output_dim() != 1) throw std::invalid_argument("return estimator must have a scalar output");
  const EstimatorDataset data = return_estimator_dataset(buffer, config, target, gamma);
  if (data.anchors.empty()) return 0.0;
  const Eigen::MatrixXd targets =
      Eigen::Map<const Eigen::RowVectorXd>(data.targets.data(), static_cast<Eigen::Index>(data.targets.size()));
  return fit_regression(estimator, adam, buffer.histories, data.anchors, targets, epochs, minibatch, rng);
}

ReturnEstimates estimate(const Mlp& vision_estimator, const Mlp& blind_estimator, std::span<const double> history) {
  const Eigen::VectorXd h = Eigen::Map<const Eigen::VectorXd>(history.data(), static_cast<Eigen::Index>(history.size()));
  return {vision_estimator.forward(h)[0], blind_estimator.forward(h)[0]};
}

double compute_threshold(std::span<const double> blind_window, double alpha) {
  if (blind_window.empty()) throw std::invalid_argument("threshold window is empty");
  const double mean = std::accumulate(blind_window.begin(), blind_window.end(), 0.0) /
                      static_cast<double>(blind_window.size());
  return mean - alpha;
}

ComposerState initial_composer_state(const ComposerConfig& config) {
  ComposerState s;
  s.active = Phase::Vision;
  s.dwell = config.switch_period;
  return s;
}

namespace {

void push_window(std::deque<double>& window, double value, int length) {
  window.push_back(value);
  while (static_cast<int>(window.size()) > length) window.pop_front();
}

double window_mean(const std::deque<double>& window) {
  return std::accumulate(window.begin(), window.end(), 0.0) / static_cast<double>(window.size());
}

}  // namespace

Selection select_action(const ComposerState& state, const ComposerConfig& config, const ReturnEstimates& estimates,
                        const Action& vision_action, const Action& blind_action, double speed) {
  Selection sel;
  sel.next = state;
  push_window(sel.next.vision_window, estimates.vision, config.smoothing_window);
  push_window(sel.next.blind_window, estimates.blind, config.smoothing_window);
  sel.smoothed_vision = window_mean(sel.next.vision_window);
  const std::vector<double> blind(sel.next.blind_window.begin(), sel.next.blind_window.end());
  sel.threshold = compute_threshold(blind, config.alpha_threshold.value_or(0.0));
  sel.next.last_threshold = sel.threshold;

  const bool vision_beats_blind = sel.smoothed_vision > estimates.blind;
  const bool blind_above_threshold = !config.alpha_threshold || estimates.blind > sel.threshold;
  sel.desired = vision_beats_blind && blind_above_threshold ? Phase::Vision : Phase::Blind;

  sel.next.dwell = std::min(state.dwell + 1, config.switch_period);
  if (sel.desired != state.active && sel.next.dwell >= config.switch_period && speed <= config.v_lock) {
    sel.next.active = sel.desired;
    sel.next.dwell = 0;
    sel.switched = true;
  }
  sel.phase = sel.next.active;
  sel.action = sel.phase == Phase::Vision ? vision_action : blind_action;
  return sel;
}

std::vector<double> softmax_probabilities(std::span<const double> q_values, double temperature) {
  if (q_values.empty()) throw std::invalid_argument("softmax needs at least one value");
  const double tau = std::max(temperature, 1e-6);
  const double top = *std::max_element(q_values.begin(), q_values.end());
  std::vector<double> p(q_values.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp((q_values[i] - top) / tau);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

int softmax_select(std::span<const double> q_values, double temperature, std::mt19937_64& rng) {
  const std::vector<double> p = softmax_probabilities(q_values, temperature);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double draw = u(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (draw < acc) return static_cast<int>(i);
  }
  return static_cast<int>(p.size()) - 1;
}

}  // namespace vbcom
