#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace vbcom {

/// Fully connected tanh network with a linear output layer. Parameters live in one flat
/// vector (per layer: column-major weights, then bias) so optimizers and serializers see
/// a single block.
class Mlp {
 public:
  struct Cache {
    std::vector<Eigen::MatrixXd> activations;  // input, then each hidden layer output
  };

  Mlp() = default;
  explicit Mlp(std::vector<int> layer_sizes);

  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  const std::vector<int>& layer_sizes() const { return sizes_; }
  Eigen::Index num_params() const { return theta_.size(); }

  Eigen::VectorXd& params() { return theta_; }
  const Eigen::VectorXd& params() const { return theta_; }

  Eigen::Map<const Eigen::MatrixXd> weight(int layer) const;
  Eigen::Map<Eigen::MatrixXd> weight(int layer);
  Eigen::Map<const Eigen::VectorXd> bias(int layer) const;
  Eigen::Map<Eigen::VectorXd> bias(int layer);

  /// Orthogonal initialisation; the last layer uses `output_gain`. Biases start at zero.
  void init_orthogonal(std::mt19937_64& rng, double gain = 1.0, double output_gain = 1.0);

  Eigen::VectorXd forward(const Eigen::VectorXd& input) const;
  /// Batched pass over the columns of `inputs` (input_dim x N).
  Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs, Cache* cache) const;

  /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output) (output_dim x N).
  void backward(const Cache& cache, const Eigen::MatrixXd& output_grad, Eigen::VectorXd& grad,
                Eigen::MatrixXd* input_grad = nullptr) const;

 private:
  std::vector<int> sizes_;
  std::vector<Eigen::Index> weight_offset_;
  std::vector<Eigen::Index> bias_offset_;
  Eigen::VectorXd theta_;
};

inline constexpr double kLogStdMin = -4.0;
inline constexpr double kLogStdMax = 1.0;
inline const double kLog2Pi = std::log(2.0 * M_PI);

/// Diagonal Gaussian over the output of a mean network with a state-independent log-std.
struct GaussianPolicy {
  Mlp mean;
  Eigen::VectorXd log_std;

  GaussianPolicy() = default;
  GaussianPolicy(std::vector<int> layer_sizes, double init_log_std);

  Eigen::VectorXd clamped_log_std() const;
};

struct GaussianSample {
  Eigen::VectorXd action;
  double log_prob = 0.0;
};

double gaussian_log_prob(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Eigen::VectorXd& log_std);

/// Samples N(mean, diag(exp(2 log_std))) with log_std clamped to [-4, 1]; returns the mean when
/// `deterministic`.
GaussianSample gaussian_head(const Eigen::VectorXd& mean, const Eigen::VectorXd& log_std, std::mt19937_64& rng,
                             bool deterministic = false);

double gaussian_entropy(const Eigen::VectorXd& log_std);

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t step = 0;
};

/// Bias-corrected Adam step on a flat parameter block.
void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& state, const AdamConfig& config);

class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig config) : config_(config) {}
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) { adam_step(params, grad, state_, config_); }
  AdamConfig& config() { return config_; }
  const AdamState& state() const { return state_; }

 private:
  AdamConfig config_;
  AdamState state_;
};

/// Rescales the concatenated gradient blocks to at most `max_norm`; returns the pre-clip norm.
double clip_grad_norm(std::span<Eigen::VectorXd* const> grads, double max_norm);

/// Minibatch mean-squared-error regression of `net` onto `targets` (output_dim x samples.size()),
/// reading input columns `samples` of `inputs`. Returns the mean minibatch loss over all passes.
double fit_regression(Mlp& net, Adam& adam, const Eigen::MatrixXd& inputs, std::span<const int> samples,
                      const Eigen::MatrixXd& targets, int epochs, int minibatch, std::mt19937_64& rng,
                      double max_grad_norm = 1.0);

// Checkpoint byte layout (all little-endian):
//   0  char[4]  magic "VBNN"
//   4  u32      format version (1)
//   8  u32      flags (bit 0: trailing log-std block present)
//  12  u32      number of layer sizes L
//  16  u32[L]   layer sizes, input first
//      u64      config hash
//      u64      seed
//      f32[]    per layer: weights row-major (out x in), then bias (out)
//      f32[out] log-std (when flagged)
struct CheckpointMeta {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_network(std::ostream& os, const Mlp& net, const Eigen::VectorXd* log_std, const CheckpointMeta& meta);
void read_network(std::istream& is, Mlp& net, Eigen::VectorXd* log_std, CheckpointMeta* meta = nullptr);

void save_mlp(const std::filesystem::path& path, const Mlp& net, const CheckpointMeta& meta = {});
Mlp load_mlp(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);
void save_policy(const std::filesystem::path& path, const GaussianPolicy& policy, const CheckpointMeta& meta = {});
GaussianPolicy load_policy(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

}  // namespace vbcom
