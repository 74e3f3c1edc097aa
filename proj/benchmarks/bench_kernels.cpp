#include <benchmark/benchmark.h>

#include "resnet/blocks.hpp"
#include "resnet/network.hpp"

using namespace resnet;

namespace {

TensorF random_tensor(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  TensorF t(shape);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

// Args: batch, channels, spatial extent. Shapes follow the CIFAR stages.
void BM_ConvForward(benchmark::State& state) {
  const auto n = state.range(0), c = state.range(1), hw = state.range(2);
  const auto x = random_tensor({n, c, hw, hw}, 1);
  const auto w = random_tensor({c, c, 3, 3}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_forward(x, w, 1, 1));
  state.SetItemsProcessed(state.iterations() * n * c * c * 9 * hw * hw);
}

void BM_ConvBackward(benchmark::State& state) {
  const auto n = state.range(0), c = state.range(1), hw = state.range(2);
  const auto x = random_tensor({n, c, hw, hw}, 1);
  const auto w = random_tensor({c, c, 3, 3}, 2);
  const auto dy = random_tensor({n, c, hw, hw}, 3);
  TensorF dx, dw;
  for (auto _ : state) {
    conv2d_backward(x, w, 1, 1, dy, &dx, &dw);
    benchmark::DoNotOptimize(dx.data().data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * c * c * 9 * hw * hw);
}

void BM_Matmul(benchmark::State& state) {
  const auto m = state.range(0);
  const auto a = random_tensor({m, m}, 4), b = random_tensor({m, m}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * m * m * m);
}

void BM_BasicBlockTrainStep(benchmark::State& state) {
  const auto n = state.range(0), c = state.range(1), hw = state.range(2);
  Rng rng(6);
  auto block = BasicBlockParams<float>::make(c, c, 1, ShortcutKind::kIdentity, rng);
  const auto x = random_tensor({n, c, hw, hw}, 7);
  for (auto _ : state) {
    Tape<float> tape;
    ParamBinder<float> binder(tape);
    ForwardContext<float> ctx{binder, Mode::kTrain, {}};
    const auto y = basic_block_forward(ctx, tape.input(x), block, "b");
    benchmark::DoNotOptimize(tape.backward(ad::mean(y), false));
  }
}

void BM_Cifar20Forward(benchmark::State& state) {
  NetworkF net(build_cifar(3, true), 8);
  const auto x = random_tensor({state.range(0), 3, 32, 32}, 9);
  for (auto _ : state) benchmark::DoNotOptimize(net.logits(x, Mode::kInfer));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_ConvForward)->Args({128, 16, 32})->Args({128, 32, 16})->Args({128, 64, 8})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward)->Args({128, 16, 32})->Args({128, 64, 8})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256)->Arg(576);
BENCHMARK(BM_BasicBlockTrainStep)->Args({32, 16, 32})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Cifar20Forward)->Arg(1)->Arg(128)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
