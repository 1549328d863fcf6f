#include <cmath>
#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

#include "vbcom/mlp.hpp"

using namespace vbcom;

TEST(Mlp, ShapesAndParamCount) {
  Mlp net({4, 8, 3});
  EXPECT_EQ(net.input_dim(), 4);
  EXPECT_EQ(net.output_dim(), 3);
  EXPECT_EQ(net.num_params(), 4 * 8 + 8 + 8 * 3 + 3);
  EXPECT_EQ(net.weight(0).rows(), 8);
  EXPECT_EQ(net.weight(0).cols(), 4);
}

TEST(Mlp, ForwardMatchesHandComputation) {
  Mlp net({2, 2, 1});
  net.weight(0) << 1.0, -1.0, 0.5, 2.0;
  net.bias(0) << 0.1, -0.2;
  net.weight(1) << 3.0, -1.0;
  net.bias(1) << 0.25;
  const Eigen::Vector2d x(0.3, -0.4);
  const double h0 = std::tanh(1.0 * 0.3 - 1.0 * -0.4 + 0.1);
  const double h1 = std::tanh(0.5 * 0.3 + 2.0 * -0.4 - 0.2);
  EXPECT_NEAR(net.forward(Eigen::VectorXd(x))[0], 3.0 * h0 - h1 + 0.25, 1e-14);
}

TEST(Mlp, BatchedMatchesSingle) {
  std::mt19937_64 rng(1);
  Mlp net({5, 16, 16, 2});
  net.init_orthogonal(rng);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 7);
  const Eigen::MatrixXd y = net.forward(x, nullptr);
  for (int i = 0; i < 7; ++i) EXPECT_LT((y.col(i) - net.forward(Eigen::VectorXd(x.col(i)))).norm(), 1e-12);
}

TEST(Mlp, OrthogonalInitRows) {
  std::mt19937_64 rng(2);
  Mlp net({6, 4, 3});
  net.init_orthogonal(rng, 1.0, 0.01);
  const Eigen::MatrixXd w = net.weight(0);
  EXPECT_LT((w * w.transpose() - Eigen::MatrixXd::Identity(4, 4)).norm(), 1e-10);
  EXPECT_EQ(net.bias(0).norm(), 0.0);
  EXPECT_LT(net.weight(1).norm(), 0.05);
}

TEST(Mlp, BackwardMatchesFiniteDifference) {
  std::mt19937_64 rng(3);
  Mlp net({3, 6, 2});
  net.init_orthogonal(rng);
  net.params() += 0.1 * Eigen::VectorXd::Random(net.num_params());
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 4);
  const Eigen::MatrixXd c = Eigen::MatrixXd::Random(2, 4);
  Mlp::Cache cache;
  net.forward(x, &cache);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(net.num_params());
  Eigen::MatrixXd gx;
  net.backward(cache, c, g, &gx);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < net.num_params(); ++i) {
    Mlp p = net, m = net;
    p.params()[i] += h;
    m.params()[i] -= h;
    const double fd = ((c.array() * p.forward(x, nullptr).array()).sum() -
                       (c.array() * m.forward(x, nullptr).array()).sum()) / (2 * h);
    EXPECT_NEAR(g[i], fd, 1e-7);
  }
  Eigen::MatrixXd xp = x;
  xp(1, 2) += h;
  Eigen::MatrixXd xm = x;
  xm(1, 2) -= h;
  const double fdx = ((c.array() * net.forward(xp, nullptr).array()).sum() -
                      (c.array() * net.forward(xm, nullptr).array()).sum()) / (2 * h);
  EXPECT_NEAR(gx(1, 2), fdx, 1e-7);
}

TEST(Gaussian, LogProbClosedForm) {
  const Eigen::Vector2d x(0.5, -1.0), mu(0.0, 0.0), ls(0.0, std::log(2.0));
  const double expected = -0.5 * (0.25 + 0.25) - std::log(2.0) - kLog2Pi;
  EXPECT_NEAR(gaussian_log_prob(x, mu, ls), expected, 1e-14);
}

TEST(Gaussian, EntropyClosedForm) {
  const Eigen::Vector3d ls(0.0, -1.0, 0.5);
  EXPECT_NEAR(gaussian_entropy(ls), 1.5 * (1.0 + kLog2Pi) - 0.5, 1e-14);
}

TEST(Gaussian, DeterministicReturnsMean) {
  std::mt19937_64 rng(1);
  const Eigen::Vector2d mu(0.3, -0.2);
  const auto s = gaussian_head(mu, Eigen::Vector2d(0.0, 0.0), rng, true);
  EXPECT_EQ(s.action, Eigen::VectorXd(mu));
}

TEST(Gaussian, SampleMoments) {
  std::mt19937_64 rng(4);
  const Eigen::VectorXd mu = Eigen::VectorXd::Constant(1, 1.0);
  const Eigen::VectorXd ls = Eigen::VectorXd::Constant(1, std::log(0.5));
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double a = gaussian_head(mu, ls, rng).action[0];
    sum += a;
    sq += a * a;
  }
  const double mean = sum / n;
  EXPECT_NEAR(mean, 1.0, 0.02);
  EXPECT_NEAR(std::sqrt(sq / n - mean * mean), 0.5, 0.02);
}

TEST(Gaussian, LogStdClamped) {
  GaussianPolicy p({2, 3}, 5.0);
  EXPECT_EQ(p.clamped_log_std().maxCoeff(), kLogStdMax);
}

TEST(Adam, FirstStepIsLearningRate) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd g(3);
  g << 2.0, -0.5, 0.0;
  AdamState st;
  adam_step(x, g, st, AdamConfig{});
  EXPECT_NEAR(x[0], -3e-4, 1e-10);
  EXPECT_NEAR(x[1], 3e-4, 1e-10);
  EXPECT_EQ(x[2], 0.0);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, MinimisesQuadratic) {
  Adam opt(AdamConfig{0.05});
  Eigen::VectorXd x = Eigen::VectorXd::Constant(2, 3.0);
  for (int i = 0; i < 2000; ++i) opt.step(x, 2.0 * (x - Eigen::Vector2d(1.0, -2.0)));
  EXPECT_NEAR(x[0], 1.0, 1e-3);
  EXPECT_NEAR(x[1], -2.0, 1e-3);
}

TEST(ClipGradNorm, RescalesJointNorm) {
  Eigen::VectorXd a = Eigen::Vector2d(3.0, 0.0), b = Eigen::VectorXd::Constant(1, 4.0);
  Eigen::VectorXd* blocks[] = {&a, &b};
  EXPECT_DOUBLE_EQ(clip_grad_norm(blocks, 1.0), 5.0);
  EXPECT_NEAR(std::sqrt(a.squaredNorm() + b.squaredNorm()), 1.0, 1e-12);
  EXPECT_NEAR(a[0], 0.6, 1e-12);
  EXPECT_DOUBLE_EQ(clip_grad_norm(blocks, 10.0), std::sqrt(a.squaredNorm() + b.squaredNorm()));
}

TEST(Regression, FitsLinearTarget) {
  std::mt19937_64 rng(5);
  Mlp net({2, 16, 1});
  net.init_orthogonal(rng);
  Adam adam(AdamConfig{3e-3});
  const int n = 256;
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(2, n);
  const Eigen::MatrixXd y = 0.5 * x.row(0) - 0.3 * x.row(1);
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const double first = fit_regression(net, adam, x, idx, y, 1, 32, rng);
  double last = first;
  for (int i = 0; i < 200; ++i) last = fit_regression(net, adam, x, idx, y, 1, 32, rng);
  EXPECT_LT(last, 1e-3);
  EXPECT_LT(last, first);
}

TEST(Checkpoint, StreamRoundTripIsFloat32) {
  std::mt19937_64 rng(6);
  GaussianPolicy p({4, 5, 3}, -0.5);
  p.mean.init_orthogonal(rng);
  std::stringstream ss;
  write_network(ss, p.mean, &p.log_std, CheckpointMeta{0xABCDEFull, 42});
  const std::string bytes = ss.str();
  ASSERT_GE(bytes.size(), 4u);
  EXPECT_EQ(bytes.substr(0, 4), "VBNN");
  Mlp q;
  Eigen::VectorXd ls;
  CheckpointMeta meta;
  read_network(ss, q, &ls, &meta);
  EXPECT_EQ(meta.config_hash, 0xABCDEFull);
  EXPECT_EQ(meta.seed, 42u);
  EXPECT_EQ(q.layer_sizes(), p.mean.layer_sizes());
  for (Eigen::Index i = 0; i < q.num_params(); ++i) {
    EXPECT_EQ(q.params()[i], static_cast<double>(static_cast<float>(p.mean.params()[i])));
  }
  EXPECT_EQ(ls[0], static_cast<double>(static_cast<float>(-0.5)));
}

TEST(Checkpoint, FileRoundTripAndBadMagic) {
  const auto dir = std::filesystem::temp_directory_path() / "vbcom_test_mlp";
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(7);
  GaussianPolicy p({3, 4, 2}, 0.0);
  p.mean.init_orthogonal(rng);
  save_policy(dir / "p.bin", p, {1, 2});
  const GaussianPolicy q = load_policy(dir / "p.bin");
  EXPECT_EQ(q.log_std.size(), 2);
  const Eigen::Vector3d x(0.1, 0.2, 0.3);
  EXPECT_LT((q.mean.forward(Eigen::VectorXd(x)) - p.mean.forward(Eigen::VectorXd(x))).norm(), 1e-5);
  std::stringstream junk("XXXXjunk");
  Mlp m;
  EXPECT_ANY_THROW(read_network(junk, m, nullptr));
  EXPECT_ANY_THROW(load_mlp(dir / "missing.bin"));
  std::filesystem::remove_all(dir);
}
