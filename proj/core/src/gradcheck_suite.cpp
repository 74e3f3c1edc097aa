#include "resnet/gradcheck_suite.hpp"

#include <cmath>
#include <functional>

#include "resnet/blocks.hpp"

namespace resnet {

namespace {

TensorD randn(const Shape& shape, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  TensorD t(shape);
  for (auto& v : t.data()) v = normal(rng);
  return t;
}

// Keeps values at least `gap` away from zero so ReLU kinks stay out of reach of eps.
TensorD away_from_zero(TensorD t, double gap) {
  for (auto& v : t.data()) v = v >= 0 ? v + gap : v - gap;
  return t;
}

// sum(y * w) with a constant random weighting w.
Var<double> weighted_sum(Tape<double>& tape, const Var<double>& y, Rng& rng) {
  const Var<double> w = tape.input(randn(y.shape(), rng));
  return ad::sum(ad::mul(y, w));
}

using Build = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>, Rng&)>;

GradCheckCase check(const std::string& name, std::vector<TensorD> params, const Build& build,
                    double eps, std::uint64_t seed) {
  GraphBuilder g = [&](Tape<double>& tape, std::span<const Var<double>> vars) {
    Rng rng(seed ^ 0x5151);  // same weighting on every build
    return build(tape, vars, rng);
  };
  return {name, grad_check(g, params, eps)};
}

template <typename Block>
GradCheckCase check_block(const std::string& name, Block block, const Shape& x_shape, double eps,
                          std::uint64_t seed,
                          Var<double> (*forward)(ForwardContext<double>&, const Var<double>&, Block&,
                                                 const std::string&)) {
  Rng rng(seed);
  std::vector<ParamRef<double>> refs;
  block.collect("", refs);
  std::vector<const TensorD*> trainable;
  std::vector<TensorD> params{randn(x_shape, rng)};
  for (const auto& r : refs) {
    if (!r.trainable) continue;
    trainable.push_back(r.tensor);
    // BN affine near (1, 0) but not at it, so the gradients are generic without
    // letting a channel's ReLU go entirely dead (a dead channel has an all-zero gradient).
    params.push_back(r.is_weight ? *r.tensor : randn(r.tensor->shape(), rng, 0.2));
    if (r.name.find("gamma") != std::string::npos) {
      for (auto& v : params.back().data()) v += 1.0;
    }
  }
  return check(
      name, std::move(params),
      [&](Tape<double>& tape, std::span<const Var<double>> vars, Rng& wrng) {
        ParamBinder<double> binder(tape);
        for (std::size_t i = 0; i < trainable.size(); ++i) binder.bind(*trainable[i], vars[i + 1]);
        ForwardContext<double> ctx{binder, Mode::kTrain, {}};
        return weighted_sum(tape, forward(ctx, vars[0], block, "block"), wrng);
      },
      eps, seed);
}

}  // namespace

std::vector<GradCheckCase> run_standard_grad_checks(double eps, std::uint64_t seed) {
  std::vector<GradCheckCase> out;
  Rng rng(seed);

  struct ConvCase {
    const char* name;
    Shape x, w;
    int stride, pad;
  };
  for (const ConvCase& c : {ConvCase{"conv3x3_s1", {2, 3, 5, 5}, {4, 3, 3, 3}, 1, 1},
                            ConvCase{"conv3x3_s2", {2, 2, 6, 6}, {3, 2, 3, 3}, 2, 1},
                            ConvCase{"conv1x1_s2", {2, 3, 5, 5}, {4, 3, 1, 1}, 2, 0},
                            ConvCase{"conv7x7_s2", {1, 2, 9, 9}, {2, 2, 7, 7}, 2, 3}}) {
    out.push_back(check(
        c.name, {randn(c.x, rng), randn(c.w, rng, 0.3)},
        [&](Tape<double>& t, std::span<const Var<double>> v, Rng& r) {
          return weighted_sum(t, ad::conv2d(v[0], v[1], c.stride, c.pad), r);
        },
        eps, seed + 1));
  }

  for (Mode mode : {Mode::kTrain, Mode::kInfer}) {
    BNParams<double> bn = BNParams<double>::make(3);
    bn.running_mean = randn({3}, rng, 0.3);
    bn.running_var = TensorD({3}, std::vector<double>{0.5, 1.5, 2.0});
    const BNParams<double> frozen = bn;
    out.push_back(check(
        mode == Mode::kTrain ? "batchnorm_train" : "batchnorm_infer",
        {randn({4, 3, 3, 3}, rng), away_from_zero(randn({3}, rng, 0.3), 1.0), randn({3}, rng)},
        [&, mode](Tape<double>& t, std::span<const Var<double>> v, Rng& r) {
          bn = frozen;
          return weighted_sum(t, ad::batchnorm(v[0], v[1], v[2], bn, mode), r);
        },
        eps, seed + 2));
  }

  out.push_back(check(
      "relu", {away_from_zero(randn({2, 3, 4, 4}, rng), 0.01)},
      [](Tape<double>& t, std::span<const Var<double>> v, Rng& r) {
        return weighted_sum(t, ad::relu(v[0]), r);
      },
      eps, seed + 3));

  out.push_back(check(
      "maxpool3x3_s2", {randn({2, 2, 7, 7}, rng)},
      [](Tape<double>& t, std::span<const Var<double>> v, Rng& r) {
        return weighted_sum(t, ad::maxpool(v[0], 3, 2, 1), r);
      },
      eps, seed + 4));

  out.push_back(check(
      "global_avg_pool", {randn({2, 3, 4, 4}, rng)},
      [](Tape<double>& t, std::span<const Var<double>> v, Rng& r) {
        return weighted_sum(t, ad::global_avg_pool(v[0]), r);
      },
      eps, seed + 5));

  out.push_back(check(
      "linear", {randn({3, 5}, rng), randn({5, 4}, rng), randn({4}, rng)},
      [](Tape<double>& t, std::span<const Var<double>> v, Rng& r) {
        return weighted_sum(t, ad::linear(v[0], v[1], v[2]), r);
      },
      eps, seed + 6));

  out.push_back(check(
      "softmax_cross_entropy", {randn({4, 5}, rng)},
      [](Tape<double>&, std::span<const Var<double>> v, Rng&) {
        return ad::softmax_cross_entropy(v[0], {0, 3, 4, 1});
      },
      eps, seed + 7));

  out.push_back(check(
      "add_per_channel", {randn({2, 3, 2, 2}, rng), randn({3}, rng)},
      [](Tape<double>& t, std::span<const Var<double>> v, Rng& r) {
        return weighted_sum(t, ad::add(v[0], v[1]), r);
      },
      eps, seed + 8));

  out.push_back(check_block<BasicBlockParams<double>>(
      "basic_block_identity", BasicBlockParams<double>::make(3, 3, 1, ShortcutKind::kIdentity, rng),
      {3, 3, 4, 4}, eps, seed + 10, &basic_block_forward<double>));
  out.push_back(check_block<BasicBlockParams<double>>(
      "basic_block_option_a", BasicBlockParams<double>::make(2, 4, 2, ShortcutKind::kZeroPadA, rng),
      {3, 2, 5, 5}, eps, seed + 11, &basic_block_forward<double>));
  out.push_back(check_block<BasicBlockParams<double>>(
      "basic_block_option_b",
      BasicBlockParams<double>::make(2, 4, 2, ShortcutKind::kProjectionB, rng), {3, 2, 4, 4}, eps,
      seed + 12, &basic_block_forward<double>));
  out.push_back(check_block<BottleneckParams<double>>(
      "bottleneck_identity", BottleneckParams<double>::make(8, 2, 1, ShortcutKind::kIdentity, rng),
      {2, 8, 3, 3}, eps, seed + 13, &bottleneck_block_forward<double>));
  out.push_back(check_block<BottleneckParams<double>>(
      "bottleneck_option_a", BottleneckParams<double>::make(4, 2, 2, ShortcutKind::kZeroPadA, rng),
      {2, 4, 4, 4}, eps, seed + 14, &bottleneck_block_forward<double>));
  out.push_back(check_block<BottleneckParams<double>>(
      "bottleneck_option_b", BottleneckParams<double>::make(4, 2, 2, ShortcutKind::kProjectionB, rng),
      {2, 4, 4, 4}, eps, seed + 15, &bottleneck_block_forward<double>));
  return out;
}

}  // namespace resnet
