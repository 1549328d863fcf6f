#include "vbcom/mlp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace vbcom {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

Mlp::Mlp(std::vector<int> layer_sizes) : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw std::invalid_argument("an MLP needs at least input and output sizes");
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    if (sizes_[l] <= 0 || sizes_[l + 1] <= 0) throw std::invalid_argument("layer sizes must be positive");
    weight_offset_.push_back(offset);
    offset += static_cast<Eigen::Index>(sizes_[l]) * sizes_[l + 1];
    bias_offset_.push_back(offset);
    offset += sizes_[l + 1];
  }
  theta_ = Eigen::VectorXd::Zero(offset);
}

Eigen::Map<const Eigen::MatrixXd> Mlp::weight(int l) const {
  return {theta_.data() + weight_offset_[l], sizes_[l + 1], sizes_[l]};
}
Eigen::Map<Eigen::MatrixXd> Mlp::weight(int l) { return {theta_.data() + weight_offset_[l], sizes_[l + 1], sizes_[l]}; }
Eigen::Map<const Eigen::VectorXd> Mlp::bias(int l) const { return {theta_.data() + bias_offset_[l], sizes_[l + 1]}; }
Eigen::Map<Eigen::VectorXd> Mlp::bias(int l) { return {theta_.data() + bias_offset_[l], sizes_[l + 1]}; }

void Mlp::init_orthogonal(std::mt19937_64& rng, double gain, double output_gain) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int l = 0; l < num_layers(); ++l) {
    const int rows = sizes_[l + 1];
    const int cols = sizes_[l];
    const int big = std::max(rows, cols);
    const int small = std::min(rows, cols);
    Eigen::MatrixXd a(big, small);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = normal(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
    const Eigen::MatrixXd r = qr.matrixQR().topRows(small).template triangularView<Eigen::Upper>();
    for (int j = 0; j < small; ++j) {
      if (r(j, j) < 0) q.col(j) *= -1.0;
    }
    const double g = l + 1 == num_layers() ? output_gain : gain;
    weight(l) = g * (rows >= cols ? q : Eigen::MatrixXd(q.transpose()));
    bias(l).setZero();
  }
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& input) const {
  if (input.size() != input_dim()) {
    throw std::logic_error("MLP input has " + std::to_string(input.size()) + " entries, expected " +
                           std::to_string(input_dim()));
  }
  Eigen::VectorXd a = input;
  for (int l = 0; l < num_layers(); ++l) {
    Eigen::VectorXd z = weight(l) * a + bias(l);
    a = l + 1 == num_layers() ? z : Eigen::VectorXd(z.array().tanh());
  }
  return a;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& inputs, Cache* cache) const {
  if (inputs.rows() != input_dim()) {
    throw std::logic_error("MLP batch has " + std::to_string(inputs.rows()) + " rows, expected " +
                           std::to_string(input_dim()));
  }
  if (cache) {
    cache->activations.resize(num_layers());
    cache->activations[0] = inputs;
  }
  Eigen::MatrixXd a = inputs;
  for (int l = 0; l < num_layers(); ++l) {
    Eigen::MatrixXd z = weight(l) * a;
    z.colwise() += bias(l);
    if (l + 1 == num_layers()) return z;
    a = z.array().tanh();
    if (cache) cache->activations[l + 1] = a;
  }
  return a;
}

void Mlp::backward(const Cache& cache, const Eigen::MatrixXd& output_grad, Eigen::VectorXd& grad,
                   Eigen::MatrixXd* input_grad) const {
  if (grad.size() != num_params()) grad = Eigen::VectorXd::Zero(num_params());
  Eigen::MatrixXd delta = output_grad;
  for (int l = num_layers() - 1; l >= 0; --l) {
    const Eigen::MatrixXd& a_in = cache.activations[l];
    Eigen::Map<Eigen::MatrixXd>(grad.data() + weight_offset_[l], sizes_[l + 1], sizes_[l]).noalias() +=
        delta * a_in.transpose();
    Eigen::Map<Eigen::VectorXd>(grad.data() + bias_offset_[l], sizes_[l + 1]) += delta.rowwise().sum();
    if (l == 0 && !input_grad) break;
    Eigen::MatrixXd back = weight(l).transpose() * delta;
    if (l == 0) {
      *input_grad = std::move(back);
      break;
    }
    delta = back.array() * (1.0 - a_in.array().square());
  }
}

GaussianPolicy::GaussianPolicy(std::vector<int> layer_sizes, double init_log_std)
    : mean(std::move(layer_sizes)), log_std(Eigen::VectorXd::Constant(mean.output_dim(), init_log_std)) {}

Eigen::VectorXd GaussianPolicy::clamped_log_std() const { return log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax); }

double gaussian_log_prob(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Eigen::VectorXd& log_std) {
  const Eigen::VectorXd ls = log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  const Eigen::ArrayXd z = (x - mean).array() / ls.array().exp();
  return -0.5 * z.square().sum() - ls.sum() - 0.5 * static_cast<double>(x.size()) * kLog2Pi;
}

GaussianSample gaussian_head(const Eigen::VectorXd& mean, const Eigen::VectorXd& log_std, std::mt19937_64& rng,
                             bool deterministic) {
  const Eigen::VectorXd ls = log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  GaussianSample s;
  s.action = mean;
  if (!deterministic) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < mean.size(); ++i) s.action[i] += std::exp(ls[i]) * normal(rng);
  }
  s.log_prob = gaussian_log_prob(s.action, mean, ls);
  return s;
}

double gaussian_entropy(const Eigen::VectorXd& log_std) {
  const Eigen::VectorXd ls = log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  return ls.sum() + 0.5 * static_cast<double>(ls.size()) * (1.0 + kLog2Pi);
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& s, const AdamConfig& c) {
  if (grad.size() != params.size()) throw std::logic_error("Adam gradient and parameter sizes differ");
  if (s.m.size() != params.size()) {
    s.m = Eigen::VectorXd::Zero(params.size());
    s.v = Eigen::VectorXd::Zero(params.size());
  }
  ++s.step;
  s.m = c.beta1 * s.m + (1.0 - c.beta1) * grad;
  s.v = c.beta2 * s.v + (1.0 - c.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.step));
  params.array() -= c.learning_rate * (s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + c.epsilon);
}

double clip_grad_norm(std::span<Eigen::VectorXd* const> grads, double max_norm) {
  double sq = 0.0;
  for (const auto* g : grads) sq += g->squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    for (auto* g : grads) *g *= max_norm / norm;
  }
  return norm;
}

double fit_regression(Mlp& net, Adam& adam, const Eigen::MatrixXd& inputs, std::span<const int> samples,
                      const Eigen::MatrixXd& targets, int epochs, int minibatch, std::mt19937_64& rng,
                      double max_grad_norm) {
  const int n = static_cast<int>(samples.size());
  if (targets.cols() != n || targets.rows() != net.output_dim()) {
    throw std::logic_error("regression targets do not match the network output");
  }
  if (n == 0 || epochs <= 0) return 0.0;
  std::vector<int> order(n);
  double total = 0.0;
  int batches = 0;
  Mlp::Cache cache;
  Eigen::VectorXd grad(net.num_params());
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (int i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (int start = 0; start < n; start += minibatch) {
      const int b = std::min(minibatch, n - start);
      Eigen::MatrixXd x(inputs.rows(), b);
      Eigen::MatrixXd y(targets.rows(), b);
      for (int j = 0; j < b; ++j) {
        x.col(j) = inputs.col(samples[order[start + j]]);
        y.col(j) = targets.col(order[start + j]);
      }
      const Eigen::MatrixXd out = net.forward(x, &cache);
      const Eigen::MatrixXd err = out - y;
      const double scale = 1.0 / (static_cast<double>(b) * static_cast<double>(y.rows()));
      const double loss = err.squaredNorm() * scale;
      if (!std::isfinite(loss)) throw std::runtime_error("non-finite regression loss");
      grad.setZero();
      net.backward(cache, 2.0 * scale * err, grad);
      Eigen::VectorXd* blocks[] = {&grad};
      clip_grad_norm(blocks, max_grad_norm);
      adam.step(net.params(), grad);
      total += loss;
      ++batches;
    }
  }
  return total / batches;
}

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("truncated checkpoint");
  return v;
}

}  // namespace

void write_network(std::ostream& os, const Mlp& net, const Eigen::VectorXd* log_std, const CheckpointMeta& meta) {
  os.write("VBNN", 4);
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, log_std ? 1u : 0u);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(net.layer_sizes().size()));
  for (int s : net.layer_sizes()) put<std::uint32_t>(os, static_cast<std::uint32_t>(s));
  put<std::uint64_t>(os, meta.config_hash);
  put<std::uint64_t>(os, meta.seed);
  for (int l = 0; l < net.num_layers(); ++l) {
    const auto w = net.weight(l);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) put<float>(os, static_cast<float>(w(r, c)));
    }
    const auto b = net.bias(l);
    for (Eigen::Index r = 0; r < b.size(); ++r) put<float>(os, static_cast<float>(b[r]));
  }
  if (log_std) {
    for (Eigen::Index i = 0; i < log_std->size(); ++i) put<float>(os, static_cast<float>((*log_std)[i]));
  }
}

void read_network(std::istream& is, Mlp& net, Eigen::VectorXd* log_std, CheckpointMeta* meta) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "VBNN", 4) != 0) throw std::runtime_error("not a network checkpoint");
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const auto flags = get<std::uint32_t>(is);
  const auto count = get<std::uint32_t>(is);
  if (count < 2 || count > 64) throw std::runtime_error("corrupt checkpoint layer count");
  std::vector<int> sizes(count);
  for (auto& s : sizes) s = static_cast<int>(get<std::uint32_t>(is));
  CheckpointMeta m;
  m.config_hash = get<std::uint64_t>(is);
  m.seed = get<std::uint64_t>(is);
  if (meta) *meta = m;
  net = Mlp(sizes);
  for (int l = 0; l < net.num_layers(); ++l) {
    auto w = net.weight(l);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = get<float>(is);
    }
    auto b = net.bias(l);
    for (Eigen::Index r = 0; r < b.size(); ++r) b[r] = get<float>(is);
  }
  if (flags & 1u) {
    Eigen::VectorXd ls(net.output_dim());
    for (Eigen::Index i = 0; i < ls.size(); ++i) ls[i] = get<float>(is);
    if (log_std) *log_std = ls;
  } else if (log_std) {
    throw std::runtime_error("checkpoint has no log-std block");
  }
}

void save_mlp(const std::filesystem::path& path, const Mlp& net, const CheckpointMeta& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_network(os, net, nullptr, meta);
}

Mlp load_mlp(const std::filesystem::path& path, CheckpointMeta* meta) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  Mlp net;
  read_network(is, net, nullptr, meta);
  return net;
}

void save_policy(const std::filesystem::path& path, const GaussianPolicy& policy, const CheckpointMeta& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_network(os, policy.mean, &policy.log_std, meta);
}

GaussianPolicy load_policy(const std::filesystem::path& path, CheckpointMeta* meta) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  GaussianPolicy p;
  read_network(is, p.mean, &p.log_std, meta);
  return p;
}

}  // namespace vbcom
