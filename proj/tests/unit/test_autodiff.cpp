#include <gtest/gtest.h>

#include "oracles.hpp"
#include "resnet/autodiff.hpp"
#include "resnet/blocks.hpp"
#include "resnet/gradcheck_suite.hpp"

using namespace resnet;

TEST(Tape, ForwardDoubling) {
  Tape<double> tape;
  const auto x = tape.input(TensorD({2}, std::vector<double>{1, 2}));
  const auto y = ad::add(x, x);
  EXPECT_EQ(y.value()[0], 2.0);
  EXPECT_EQ(y.value()[1], 4.0);
  const auto out = tape.forward({{x.id(), TensorD({2}, std::vector<double>{5, -1})}});
  EXPECT_EQ(out.at(y.id())[0], 10.0);
  EXPECT_EQ(out.at(y.id())[1], -2.0);
}

TEST(Tape, ReplayRequiresInputs) {
  Tape<double> tape;
  const auto x = tape.input(TensorD({2}));
  ad::sum(x);
  EXPECT_THROW(tape.replay({}), Error);
}

TEST(Tape, SumGradientIsOnes) {
  std::mt19937_64 rng(1);
  Tape<double> tape;
  const auto x = tape.input(oracle::random_tensor({2, 3, 4}, rng), true);
  const auto g = tape.backward(ad::sum(x));
  EXPECT_TRUE(bitwise_equal(g[x], ones_like(x.value())));
}

TEST(Tape, FanOutAccumulates) {
  Tape<double> tape;
  const auto x = tape.input(TensorD({3}, std::vector<double>{1, 2, 3}), true);
  const auto g = tape.backward(ad::sum(ad::add(x, x)));
  for (double v : g[x].data()) EXPECT_EQ(v, 2.0);
}

TEST(Tape, UnreachedParameterGetsZeros) {
  Tape<double> tape;
  const auto x = tape.input(TensorD({2}, std::vector<double>{1, 2}), true);
  const auto p = tape.parameter(TensorD({3}, std::vector<double>{1, 1, 1}));
  const auto g = tape.backward(ad::sum(x));
  EXPECT_TRUE(bitwise_equal(g[p], TensorD({3})));
}

TEST(Tape, BackwardRequiresScalar) {
  Tape<double> tape;
  const auto x = tape.input(TensorD({2}), true);
  EXPECT_THROW(tape.backward(ad::relu(x)), Error);
}

TEST(Tape, MlpMatchesStraightLineOracle) {
  std::mt19937_64 rng(2);
  const auto x = oracle::random_tensor({4, 5}, rng);
  const auto w1 = oracle::random_tensor({5, 6}, rng), b1 = oracle::random_tensor({6}, rng);
  const auto w2 = oracle::random_tensor({6, 3}, rng), b2 = oracle::random_tensor({3}, rng);
  Tape<double> tape;
  const auto h = ad::relu(ad::linear(tape.input(x), tape.parameter(w1), tape.parameter(b1)));
  const auto y = ad::linear(h, tape.parameter(w2), tape.parameter(b2));

  auto hid = oracle::matmul(x, w1);
  for (std::int64_t i = 0; i < 4; ++i)
    for (std::int64_t j = 0; j < 6; ++j) hid.at({i, j}) = std::max(0.0, hid.at({i, j}) + b1[j]);
  auto want = oracle::matmul(hid, w2);
  for (std::int64_t i = 0; i < 4; ++i)
    for (std::int64_t j = 0; j < 3; ++j) want.at({i, j}) += b2[j];
  EXPECT_LE(oracle::rel_err(y.value(), want), 1e-14);
}

TEST(Tape, ZeroResidualGraphIsIdentity) {
  std::mt19937_64 rng(3);
  auto xv = oracle::random_tensor({2, 3, 4, 4}, rng);
  Tape<double> tape;
  const auto x = tape.input(xv);
  const auto f = ad::conv2d(x, tape.parameter(TensorD({3, 3, 3, 3})), 1, 1);
  EXPECT_TRUE(bitwise_equal(ad::add(f, x).value(), xv));
}

TEST(GradCheck, LinearMse) {
  std::mt19937_64 rng(4);
  const auto x = oracle::random_tensor({5, 4}, rng);
  const auto target = oracle::random_tensor({5, 3}, rng);
  std::vector<TensorD> params{oracle::random_tensor({4, 3}, rng), oracle::random_tensor({3}, rng)};
  const GraphBuilder mse = [&](Tape<double>& t, std::span<const Var<double>> v) {
    const auto d = ad::sub(ad::linear(t.input(x), v[0], v[1]), t.input(target));
    return ad::mean(ad::mul(d, d));
  };
  const auto r = grad_check(mse, params, 1e-5);
  EXPECT_LE(r.max_rel_error, 1e-7);
  EXPECT_EQ(r.elements, 15u);
}

TEST(GradCheck, ConvBnReluStack) {
  std::mt19937_64 rng(5);
  std::vector<TensorD> params{oracle::random_tensor({4, 2, 5, 5}, rng),
                              oracle::random_tensor({3, 2, 3, 3}, rng, 0.4),
                              TensorD({3}, std::vector<double>{1.2, 0.8, 1.5}),
                              TensorD({3}, std::vector<double>{0.1, -0.2, 0.3})};
  const auto w = oracle::random_tensor({4, 3, 5, 5}, rng);
  auto bn = BNParams<double>::make(3);
  // The tape keeps a reference to the running stats across replays, so they must outlive it.
  const GraphBuilder build = [&](Tape<double>& t, std::span<const Var<double>> v) {
    const auto y = ad::relu(ad::batchnorm(ad::conv2d(v[0], v[1], 1, 1), v[2], v[3], bn, Mode::kTrain));
    return ad::sum(ad::mul(y, t.input(w)));
  };
  // Check that no ReLU input sits within 0.01 of the kink.
  {
    Tape<double> t;
    std::vector<Var<double>> v;
    for (const auto& p : params) v.push_back(t.parameter(p));
    auto p = bn;
    const auto pre = ad::batchnorm(ad::conv2d(v[0], v[1], 1, 1), v[2], v[3], p, Mode::kTrain);
    double closest = 1e9;
    for (double z : pre.value().data()) closest = std::min(closest, std::abs(z));
    ASSERT_GT(closest, 1e-3);
  }
  EXPECT_LE(grad_check(build, params, 1e-5).max_rel_error, 1e-4);
}

TEST(GradCheck, DetectsWrongGradient) {
  // An op whose backward is off by a factor of two must be caught.
  struct BadSquare : Op<double> {
    const char* name() const override { return "bad_square"; }
    TensorD forward(std::span<const TensorD* const> in) override {
      return zip_elementwise(ZipOp::kMul, *in[0], *in[0]);
    }
    void backward(const TensorD& g, std::span<const TensorD* const> in, const TensorD&,
                  std::span<const bool>, std::span<TensorD> grads) override {
      grads[0] = zip_elementwise(ZipOp::kMul, g, *in[0]);  // should be 2*x*g
    }
  };
  std::vector<TensorD> params{TensorD({3}, std::vector<double>{0.5, -1.0, 2.0})};
  const GraphBuilder build = [](Tape<double>& t, std::span<const Var<double>> v) {
    return ad::sum(t.apply(std::make_unique<BadSquare>(), {v[0]}));
  };
  EXPECT_NEAR(grad_check(build, params, 1e-5).max_rel_error, 0.5, 1e-6);
  EXPECT_THROW(grad_check(build, params, 1e-2), Error);
}

TEST(GradCheck, StandardSuite) {
  for (const auto& c : run_standard_grad_checks(1e-5)) {
    EXPECT_LE(c.result.max_rel_error, 1e-4) << c.name;
    EXPECT_GT(c.result.elements, 0u) << c.name;
  }
}

TEST(Autodiff, IdentityShortcutPassesGradientUnchanged) {
  Rng rng(6);
  auto block = BasicBlockParams<double>::make(4, 4, 1, ShortcutKind::kIdentity, rng);
  block.zero_residual();
  std::mt19937_64 r(7);
  auto xv = oracle::random_tensor({2, 4, 5, 5}, r);
  for (auto& v : xv.data()) v = std::abs(v) + 0.1;
  const auto w = oracle::random_tensor(xv.shape(), r);

  Tape<double> tape;
  ParamBinder<double> binder(tape);
  ForwardContext<double> ctx{binder, Mode::kTrain, {}};
  const auto x = tape.input(xv, true);
  const auto y = basic_block_forward(ctx, x, block, "b");
  const auto g = tape.backward(ad::sum(ad::mul(y, tape.input(w))));
  EXPECT_TRUE(bitwise_equal(g[x], w));
}
