#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "resnet/layers.hpp"

using namespace resnet;

TEST(Conv, UnitKernelIsIdentity) {
  std::mt19937_64 rng(1);
  const auto x = oracle::random_tensor({2, 1, 5, 5}, rng);
  const TensorD w({1, 1, 1, 1}, std::vector<double>{1.0});
  EXPECT_TRUE(bitwise_equal(conv2d_forward(x, w, 1, 0), x));
}

TEST(Conv, StemShape) {
  Rng rng(2);
  const auto stem = make_conv<float>(3, 4, 7, 2, rng);
  EXPECT_EQ(stem.pad, 3);
  const auto y = conv2d(TensorF({1, 3, 224, 224}), stem);
  EXPECT_EQ(y.shape(), (Shape{1, 4, 112, 112}));
}

TEST(Conv, ForwardAndBackwardMatchDirectLoops) {
  std::mt19937_64 rng(3);
  struct Case {
    Shape x;
    Shape w;
    int stride, pad;
  };
  for (const Case& c : {Case{{2, 3, 6, 6}, {4, 3, 3, 3}, 1, 1}, Case{{1, 2, 7, 5}, {3, 2, 3, 3}, 2, 1},
                        Case{{2, 4, 6, 6}, {2, 4, 1, 1}, 2, 0}, Case{{1, 2, 9, 9}, {2, 2, 7, 7}, 2, 3}}) {
    const auto x = oracle::random_tensor(c.x, rng);
    const auto w = oracle::random_tensor(c.w, rng);
    const auto y = conv2d_forward(x, w, c.stride, c.pad);
    EXPECT_LE(oracle::rel_err(y, oracle::conv2d(x, w, c.stride, c.pad)), 1e-12);

    const auto dy = oracle::random_tensor(y.shape(), rng);
    TensorD dx, dw, odx, odw;
    conv2d_backward(x, w, c.stride, c.pad, dy, &dx, &dw);
    oracle::conv2d_backward(x, w, c.stride, c.pad, dy, odx, odw);
    EXPECT_LE(oracle::rel_err(dx, odx), 1e-12);
    EXPECT_LE(oracle::rel_err(dw, odw), 1e-12);
  }
}

TEST(Conv, FloatAgreesWithDoubleOracle) {
  std::mt19937_64 rng(4);
  const auto x = oracle::random_tensor({2, 16, 8, 8}, rng);
  const auto w = oracle::random_tensor({16, 16, 3, 3}, rng, 0.1);
  const auto y = conv2d_forward(cast<float>(x), cast<float>(w), 1, 1);
  EXPECT_LE(oracle::rel_err(cast<double>(y), oracle::conv2d(x, w, 1, 1)), 1e-5);
}

TEST(Conv, RejectsMismatchedChannels) {
  EXPECT_THROW(conv2d_forward(TensorD({1, 2, 4, 4}), TensorD({1, 3, 3, 3}), 1, 1), Error);
}

TEST(BatchNorm, TrainStatistics) {
  std::mt19937_64 rng(5);
  auto x = oracle::random_tensor({8, 3, 5, 5}, rng, 3.0);
  for (auto& v : x.data()) v += 2.0;
  auto bn = BNParams<double>::make(3);
  const auto y = batchnorm(x, bn, Mode::kTrain);
  for (std::int64_t c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    const double m = 8 * 25;
    for (std::int64_t n = 0; n < 8; ++n)
      for (std::int64_t i = 0; i < 5; ++i)
        for (std::int64_t j = 0; j < 5; ++j) mean += y.at({n, c, i, j});
    mean /= m;
    for (std::int64_t n = 0; n < 8; ++n)
      for (std::int64_t i = 0; i < 5; ++i)
        for (std::int64_t j = 0; j < 5; ++j) var += std::pow(y.at({n, c, i, j}) - mean, 2);
    var /= m;
    EXPECT_LE(std::abs(mean), 1e-5);
    EXPECT_LE(std::abs(var - 1.0), 1e-4);
  }
}

TEST(BatchNorm, MatchesTwoPassOracleAndUpdatesRunningStats) {
  std::mt19937_64 rng(6);
  const auto x = oracle::random_tensor({4, 3, 3, 2}, rng);
  auto bn = BNParams<double>::make(3);
  bn.gamma = oracle::random_tensor({3}, rng);
  bn.beta = oracle::random_tensor({3}, rng);
  bn.running_mean = TensorD({3}, std::vector<double>{0.5, -1.0, 2.0});
  bn.running_var = TensorD({3}, std::vector<double>{1.0, 2.0, 0.25});
  const auto rm0 = bn.running_mean, rv0 = bn.running_var;
  std::vector<double> mean, var;
  const auto want = oracle::batchnorm_train(x, bn.gamma, bn.beta, bn.eps, &mean, &var);
  EXPECT_LE(oracle::rel_err(batchnorm(x, bn, Mode::kTrain), want), 1e-12);
  for (std::int64_t c = 0; c < 3; ++c) {
    EXPECT_NEAR(bn.running_mean[c], 0.9 * rm0[c] + 0.1 * mean[c], 1e-14);
    EXPECT_NEAR(bn.running_var[c], 0.9 * rv0[c] + 0.1 * var[c], 1e-14);
  }
}

TEST(BatchNorm, InferUsesRunningStatistics) {
  std::mt19937_64 rng(7);
  const auto x = oracle::random_tensor({2, 2, 3, 3}, rng);
  auto bn = BNParams<double>::make(2);
  bn.running_mean = TensorD({2}, std::vector<double>{1.0, -1.0});
  bn.running_var = TensorD({2}, std::vector<double>{4.0, 0.5});
  bn.gamma = TensorD({2}, std::vector<double>{2.0, 0.5});
  bn.beta = TensorD({2}, std::vector<double>{0.1, -0.3});
  const auto before = bn;
  const auto y = batchnorm(x, bn, Mode::kInfer);
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t c = 0; c < 2; ++c)
      for (std::int64_t i = 0; i < 3; ++i)
        for (std::int64_t j = 0; j < 3; ++j) {
          const double want = bn.gamma[c] * (x.at({n, c, i, j}) - bn.running_mean[c]) /
                                  std::sqrt(bn.running_var[c] + bn.eps) +
                              bn.beta[c];
          EXPECT_NEAR(y.at({n, c, i, j}), want, 1e-14);
        }
  EXPECT_TRUE(bitwise_equal(bn.running_mean, before.running_mean));
  EXPECT_TRUE(bitwise_equal(bn.running_var, before.running_var));
}

TEST(BatchNorm, DegenerateAndTwoPoint) {
  auto bn = BNParams<double>::make(1);
  const auto y = batchnorm(create<double>({2, 1, 2, 2}, 3.0), bn, Mode::kTrain);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);

  auto tiny = BNParams<double>::make(1, 1e-12);
  const auto z = batchnorm(TensorD({2, 1, 1, 1}, std::vector<double>{1.0, 3.0}), tiny, Mode::kTrain);
  EXPECT_NEAR(z[0], -1.0, 1e-9);
  EXPECT_NEAR(z[1], 1.0, 1e-9);
  EXPECT_THROW(batchnorm(TensorD({1, 1, 1, 1}), tiny, Mode::kTrain), Error);
}

TEST(BatchNorm, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  const auto x = oracle::random_tensor({3, 2, 2, 2}, rng);
  auto bn = BNParams<double>::make(2);
  bn.gamma = TensorD({2}, std::vector<double>{1.5, -0.7});
  bn.beta = TensorD({2}, std::vector<double>{0.2, 0.4});
  const auto w = oracle::random_tensor(x.shape(), rng);
  auto loss = [&](const TensorD& in) {
    auto p = bn;
    const auto y = batchnorm(in, p, Mode::kTrain);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
    return s;
  };
  auto p = bn;
  BNCache<double> cache;
  batchnorm_forward(x, bn.gamma, bn.beta, p, Mode::kTrain, &cache);
  TensorD dx, dg, db;
  batchnorm_backward(w, bn.gamma, cache, &dx, &dg, &db);
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto hi = x, lo = x;
    hi[i] += 1e-6;
    lo[i] -= 1e-6;
    EXPECT_NEAR(dx[i], (loss(hi) - loss(lo)) / 2e-6, 1e-7);
  }
}

TEST(Relu, SignCasesAndBackward) {
  const TensorD x({3}, std::vector<double>{-1, 0, 2});
  const auto y = relu(x);
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_EQ(y[2], 2.0);
  const auto g = relu_backward(x, TensorD({3}, std::vector<double>{5, 5, 5}));
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 0.0);
  EXPECT_EQ(g[2], 5.0);
  std::mt19937_64 rng(9);
  auto pos = oracle::random_tensor({2, 3, 4}, rng);
  for (auto& v : pos.data()) v = std::abs(v);
  EXPECT_TRUE(bitwise_equal(relu(pos), pos));
}

TEST(MaxPool, ShapesConstantAndOracle) {
  EXPECT_EQ(maxpool(TensorF({1, 2, 112, 112})).shape(), (Shape{1, 2, 56, 56}));
  const auto c = maxpool(create<double>({1, 1, 6, 6}, -2.5));
  for (double v : c.data()) EXPECT_EQ(v, -2.5);
  std::mt19937_64 rng(10);
  const auto x = oracle::random_tensor({2, 3, 7, 6}, rng);
  EXPECT_EQ(oracle::rel_err(maxpool(x, 3, 2, 1), oracle::maxpool(x, 3, 2, 1)), 0.0);
  EXPECT_THROW(maxpool(x, 3, 2, 3), Error);
}

TEST(MaxPool, BackwardRoutesToArgmax) {
  std::mt19937_64 rng(11);
  const auto x = oracle::random_tensor({1, 2, 5, 5}, rng);
  std::vector<std::int64_t> arg;
  const auto y = maxpool(x, 3, 2, 1, &arg);
  const auto dy = oracle::random_tensor(y.shape(), rng);
  const auto dx = maxpool_backward(x.shape(), arg, dy);
  TensorD want(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    EXPECT_EQ(x[arg[i]], y[i]);
    want[arg[i]] += dy[i];
  }
  EXPECT_TRUE(bitwise_equal(dx, want));
}

TEST(GlobalAvgPool, ConstantAndOracle) {
  const auto y = global_avg_pool(create<double>({1, 2, 7, 7}, 2.0));
  EXPECT_EQ(y.shape(), (Shape{1, 2}));
  EXPECT_DOUBLE_EQ(y[0], 2.0);
  std::mt19937_64 rng(12);
  const auto x = oracle::random_tensor({3, 4, 5, 5}, rng);
  EXPECT_LE(oracle::rel_err(global_avg_pool(x), oracle::global_avg_pool(x)), 1e-14);
  const auto g = global_avg_pool_backward(x.shape(), create<double>({3, 4}, 25.0));
  for (double v : g.data()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Linear, IdentityZeroAndOracle) {
  std::mt19937_64 rng(13);
  const auto x = oracle::random_tensor({3, 4}, rng);
  LinearParams<double> p{TensorD({4, 4}), TensorD({4})};
  for (std::int64_t i = 0; i < 4; ++i) p.weight.at({i, i}) = 1.0;
  EXPECT_TRUE(bitwise_equal(linear(x, p), x));

  LinearParams<double> z{TensorD({4, 2}), TensorD({2}, std::vector<double>{1.5, -2.0})};
  const auto yb = linear(x, z);
  for (std::int64_t i = 0; i < 3; ++i) {
    EXPECT_EQ(yb.at({i, 0}), 1.5);
    EXPECT_EQ(yb.at({i, 1}), -2.0);
  }

  LinearParams<double> r{oracle::random_tensor({4, 3}, rng), oracle::random_tensor({3}, rng)};
  auto want = oracle::matmul(x, r.weight);
  for (std::int64_t i = 0; i < 3; ++i)
    for (std::int64_t j = 0; j < 3; ++j) want.at({i, j}) += r.bias[j];
  EXPECT_LE(oracle::rel_err(linear(x, r), want), 1e-14);
}

TEST(SoftmaxCrossEntropy, KnownValues) {
  const std::vector<int> label{3};
  EXPECT_NEAR(softmax_cross_entropy(TensorD({1, 10}), std::span<const int>(label)), std::log(10.0),
              1e-12);
  TensorD sat({1, 10});
  sat[3] = 1e4;
  EXPECT_LE(softmax_cross_entropy(sat, std::span<const int>(label)), 1e-6);
  const std::vector<int> bad{10};
  EXPECT_THROW(softmax_cross_entropy(TensorD({1, 10}), std::span<const int>(bad)), Error);
}

TEST(SoftmaxCrossEntropy, MatchesTwoPassOracle) {
  std::mt19937_64 rng(14);
  const auto logits = oracle::random_tensor({6, 5}, rng, 3.0);
  const std::vector<int> labels{0, 4, 2, 2, 1, 3};
  const double got = softmax_cross_entropy(logits, std::span<const int>(labels));
  EXPECT_NEAR(got, oracle::softmax_xent(logits, labels), 1e-13);
  EXPECT_LE(oracle::rel_err(softmax_cross_entropy_backward(logits, std::span<const int>(labels)),
                            oracle::softmax_xent_grad(logits, labels)),
            1e-13);
}

TEST(SoftmaxCrossEntropy, ArgmaxTakesFirstMaximum) {
  const TensorD l({2, 3}, std::vector<double>{1, 5, 5, -1, -2, -1});
  EXPECT_EQ(argmax_rows(l), (std::vector<int>{1, 0}));
}

TEST(HeInit, StdAndDeterminism) {
  EXPECT_NEAR(he_std(144), 0.11785, 1e-5);
  Rng a(42), b(42);
  const auto wa = he_init<double>({64, 16, 3, 3}, a);
  const auto wb = he_init<double>({64, 16, 3, 3}, b);
  EXPECT_TRUE(bitwise_equal(wa, wb));
  double mean = std::accumulate(wa.data().begin(), wa.data().end(), 0.0) / wa.size();
  double var = 0.0;
  for (double v : wa.data()) var += (v - mean) * (v - mean);
  var /= wa.size();
  EXPECT_NEAR(mean, 0.0, 0.01);
  EXPECT_NEAR(std::sqrt(var), he_std(144), 0.005);
  Rng c(7);
  const auto lin = he_init_linear<double>(64, 10, c);
  EXPECT_EQ(lin.shape(), (Shape{64, 10}));
}
