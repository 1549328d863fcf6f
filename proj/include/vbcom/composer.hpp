#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vbcom/env.hpp"
#include "vbcom/mlp.hpp"
#include "vbcom/rollout.hpp"

namespace vbcom {

enum class Phase { Blind = 0, Vision = 1 };
enum class Selector { Threshold, Softmax };
enum class EstimatorTarget { TdLambda, MonteCarlo };

std::string to_string(Selector selector);
std::string to_string(EstimatorTarget target);

struct ComposerConfig {
  int switch_period = 50;        // T, minimum dwell between executed switches [steps]
  double lambda_ret = 0.95;
  bool normalized_targets = false;
  std::optional<double> alpha_threshold = 0.5;  // nullopt runs the rule without the G_th clause
  int smoothing_window = 5;
  double v_lock = 1.5;           // [m/s]
  double softmax_temperature = 1.0;
  Selector selector = Selector::Threshold;
  EstimatorTarget target = EstimatorTarget::TdLambda;
};

void validate(const ComposerConfig& config);

/// (1 - lambda) * sum_{k=0..T} lambda^k G[t+k] for every anchor t; the sum stops at the end of
/// the sequence. `normalized` divides by (1 - lambda^{T+1}).
std::vector<double> lambda_return_targets(std::span<const double> returns, int period, double lambda,
                                          bool normalized = false);

/// sum_{k=0..T} gamma^k r[t+k], truncated at the end of the sequence.
std::vector<double> mc_return_targets(std::span<const double> rewards, double gamma, int period);

struct EstimatorDataset {
  std::vector<int> anchors;  // buffer columns with a complete window
  std::vector<double> targets;
};

/// Regression targets over a finalized buffer. Windows are cut at episode ends; anchors whose
/// window runs past the end of the rollout without the episode ending are dropped.
EstimatorDataset return_estimator_dataset(const RolloutBuffer& buffer, const ComposerConfig& config,
                                          EstimatorTarget target, double gamma);

/// Squared-error fit of the return estimator on its own policy's rollouts. Returns the mean
/// minibatch loss of the pass. Throws if the estimator input is not the proprio history.
double train_return_estimator(Mlp& estimator, Adam& adam, const RolloutBuffer& buffer, const ComposerConfig& config,
                              EstimatorTarget target, double gamma, int epochs, int minibatch, std::mt19937_64& rng);

struct ReturnEstimates {
  double vision = 0.0;
  double blind = 0.0;
};

ReturnEstimates estimate(const Mlp& vision_estimator, const Mlp& blind_estimator, std::span<const double> history);

double compute_threshold(std::span<const double> blind_window, double alpha);

struct ComposerState {
  std::deque<double> vision_window;
  std::deque<double> blind_window;
  Phase active = Phase::Vision;
  int dwell = 0;
  double last_threshold = 0.0;
};

ComposerState initial_composer_state(const ComposerConfig& config);

struct Selection {
  Action action;
  Phase phase = Phase::Vision;
  Phase desired = Phase::Vision;
  bool switched = false;
  double smoothed_vision = 0.0;
  double threshold = 0.0;
  ComposerState next;
};

/// Threshold switching rule. Vision is preferred when the smoothed vision estimate exceeds the
/// blind estimate and the blind estimate exceeds G_th; a phase change is held back while the
/// dwell since the last switch is below T or the speed exceeds v_lock.
Selection select_action(const ComposerState& state, const ComposerConfig& config, const ReturnEstimates& estimates,
                        const Action& vision_action, const Action& blind_action, double speed);

std::vector<double> softmax_probabilities(std::span<const double> q_values, double temperature);
int softmax_select(std::span<const double> q_values, double temperature, std::mt19937_64& rng);

}  // namespace vbcom
