#include <gtest/gtest.h>

#include "oracles.hpp"
#include "resnet/blocks.hpp"

using namespace resnet;

namespace {

template <typename T = double>
Tensor<T> nonneg(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto t = oracle::random_tensor<T>(shape, rng);
  for (auto& v : t.data()) v = std::abs(v);
  return t;
}

}  // namespace

TEST(Shortcut, Legality) {
  EXPECT_TRUE(shortcut_is_legal(ShortcutKind::kIdentity, 16, 16, 1));
  EXPECT_FALSE(shortcut_is_legal(ShortcutKind::kIdentity, 16, 32, 2));
  EXPECT_FALSE(shortcut_is_legal(ShortcutKind::kIdentity, 16, 16, 2));
  EXPECT_TRUE(shortcut_is_legal(ShortcutKind::kZeroPadA, 16, 32, 2));
  EXPECT_FALSE(shortcut_is_legal(ShortcutKind::kZeroPadA, 16, 16, 1));
  EXPECT_TRUE(shortcut_is_legal(ShortcutKind::kProjectionB, 16, 32, 2));
  EXPECT_TRUE(shortcut_is_legal(ShortcutKind::kProjectionB, 16, 16, 1));
  Rng rng(1);
  EXPECT_THROW(BasicBlockParams<float>::make(16, 32, 2, ShortcutKind::kIdentity, rng), Error);
  EXPECT_EQ(parse_shortcut_kind("zeropad"), ShortcutKind::kZeroPadA);
  EXPECT_THROW(parse_shortcut_kind("bogus"), Error);
}

TEST(Shortcut, IdentityIsBitwise) {
  const auto x = nonneg({2, 3, 4, 4}, 2);
  EXPECT_TRUE(bitwise_equal(shortcut_apply(x, ShortcutKind::kIdentity, 3, 1), x));
}

TEST(Shortcut, ZeroPadSubsamplesAndPadsChannels) {
  std::mt19937_64 rng(3);
  const auto x = oracle::random_tensor<float>({1, 16, 32, 32}, rng);
  const auto y = shortcut_apply(x, ShortcutKind::kZeroPadA, 32, 2);
  ASSERT_EQ(y.shape(), (Shape{1, 32, 16, 16}));
  for (std::int64_t c = 0; c < 32; ++c)
    for (std::int64_t i = 0; i < 16; ++i)
      for (std::int64_t j = 0; j < 16; ++j) {
        const float want = c < 16 ? x.at({0, c, 2 * i, 2 * j}) : 0.0f;
        ASSERT_EQ(y.at({0, c, i, j}), want);
      }
  // Odd extents keep ceil(H / s) rows.
  EXPECT_EQ(shortcut_apply(TensorF({1, 2, 5, 5}), ShortcutKind::kZeroPadA, 4, 2).shape(),
            (Shape{1, 4, 3, 3}));
}

TEST(Shortcut, ProjectionIsConvThenBn) {
  Rng rng(4);
  auto block = BasicBlockParams<double>::make(2, 4, 2, ShortcutKind::kProjectionB, rng);
  ASSERT_TRUE(block.proj.has_value());
  std::mt19937_64 r(5);
  const auto x = oracle::random_tensor({3, 2, 4, 4}, r);
  auto proj = *block.proj;
  auto bn = proj.bn;
  const auto want = batchnorm(conv2d(x, proj.conv), bn, Mode::kTrain);
  const auto got = shortcut_apply(x, ShortcutKind::kProjectionB, 4, 2, &proj, Mode::kTrain);
  EXPECT_TRUE(bitwise_equal(got, want));
}

TEST(BasicBlock, ZeroResidualIsIdentityOnNonnegativeInput) {
  for (std::int64_t c : {1, 4, 16}) {
    Rng rng(6);
    auto block = BasicBlockParams<double>::make(c, c, 1, ShortcutKind::kIdentity, rng);
    block.zero_residual();
    const auto x = nonneg({2, c, 6, 6}, 7);
    for (Mode mode : {Mode::kTrain, Mode::kInfer}) {
      EXPECT_TRUE(bitwise_equal(basic_block_forward(x, block, mode), x));
    }
  }
  // Mixed-sign input: relu(x).
  Rng rng(8);
  auto block = BasicBlockParams<double>::make(3, 3, 1, ShortcutKind::kIdentity, rng);
  block.zero_residual();
  std::mt19937_64 r(9);
  const auto x = oracle::random_tensor({2, 3, 4, 4}, r);
  EXPECT_TRUE(bitwise_equal(basic_block_forward(x, block, Mode::kInfer), relu(x)));
}

TEST(BasicBlock, ShapePreservation) {
  Rng rng(10);
  auto block = BasicBlockParams<float>::make(16, 16, 1, ShortcutKind::kIdentity, rng);
  EXPECT_EQ(basic_block_forward(TensorF({2, 16, 32, 32}, 0.5f), block, Mode::kTrain).shape(),
            (Shape{2, 16, 32, 32}));
  auto down = BasicBlockParams<float>::make(16, 32, 2, ShortcutKind::kZeroPadA, rng);
  EXPECT_EQ(basic_block_forward(TensorF({2, 16, 32, 32}, 0.5f), down, Mode::kTrain).shape(),
            (Shape{2, 32, 16, 16}));
}

TEST(BasicBlock, MatchesComposedOracle) {
  for (ShortcutKind kind : {ShortcutKind::kIdentity, ShortcutKind::kZeroPadA, ShortcutKind::kProjectionB,
                            ShortcutKind::kNone}) {
    Rng rng(11);
    const bool same = kind == ShortcutKind::kIdentity;
    auto block = BasicBlockParams<double>::make(4, same ? 4 : 8, same ? 1 : 2, kind, rng);
    std::mt19937_64 r(12);
    const auto x = oracle::random_tensor({3, 4, 6, 6}, r);
    auto ref = block;
    const auto h = relu(batchnorm(conv2d(x, ref.conv1), ref.bn1, Mode::kTrain));
    auto main = batchnorm(conv2d(h, ref.conv2), ref.bn2, Mode::kTrain);
    if (kind != ShortcutKind::kNone) {
      ProjectionParams<double>* proj = ref.proj ? &*ref.proj : nullptr;
      main = zip_elementwise(ZipOp::kAdd, main,
                             shortcut_apply(x, kind, ref.out_channels(), ref.stride(), proj, Mode::kTrain));
    }
    const auto want = relu(main);
    EXPECT_TRUE(bitwise_equal(basic_block_forward(x, block, Mode::kTrain), want)) << to_string(kind);
    // Running statistics move identically.
    EXPECT_TRUE(bitwise_equal(block.bn2.running_mean, ref.bn2.running_mean));
  }
}

TEST(BasicBlock, TapeAndTensorFormsAgree) {
  Rng rng(13);
  auto block = BasicBlockParams<double>::make(4, 8, 2, ShortcutKind::kZeroPadA, rng);
  auto copy = block;
  std::mt19937_64 r(14);
  const auto x = oracle::random_tensor({2, 4, 5, 5}, r);
  Tape<double> tape;
  ParamBinder<double> binder(tape);
  std::vector<std::string> seen;
  ForwardContext<double> ctx{binder, Mode::kTrain,
                             [&](const std::string& layer, const Var<double>&) { seen.push_back(layer); }};
  const auto y = basic_block_forward(ctx, tape.input(x), block, "blk");
  EXPECT_TRUE(bitwise_equal(y.value(), basic_block_forward(x, copy, Mode::kTrain)));
  EXPECT_EQ(seen, (std::vector<std::string>{"blk.conv1", "blk.conv2"}));
}

TEST(Bottleneck, StructureAndZeroResidual) {
  Rng rng(15);
  auto b = BottleneckParams<double>::make(64, 64, 1, ShortcutKind::kProjectionB, rng);
  EXPECT_EQ(b.out_channels(), 256);
  EXPECT_EQ(b.conv1.kernel(), 1);
  EXPECT_EQ(b.conv2.kernel(), 3);
  EXPECT_EQ(b.conv3.kernel(), 1);

  auto id = BottleneckParams<double>::make(16, 4, 1, ShortcutKind::kIdentity, rng);
  id.zero_residual();
  const auto x = nonneg({2, 16, 5, 5}, 16);
  for (Mode mode : {Mode::kTrain, Mode::kInfer}) {
    EXPECT_TRUE(bitwise_equal(bottleneck_block_forward(x, id, mode), x));
  }
}

TEST(Bottleneck, MatchesComposedOracle) {
  Rng rng(17);
  auto block = BottleneckParams<double>::make(8, 4, 2, ShortcutKind::kProjectionB, rng);
  std::mt19937_64 r(18);
  const auto x = oracle::random_tensor({2, 8, 6, 6}, r);
  auto ref = block;
  auto h = relu(batchnorm(conv2d(x, ref.conv1), ref.bn1, Mode::kTrain));
  h = relu(batchnorm(conv2d(h, ref.conv2), ref.bn2, Mode::kTrain));
  const auto main = batchnorm(conv2d(h, ref.conv3), ref.bn3, Mode::kTrain);
  const auto sc = shortcut_apply(x, ShortcutKind::kProjectionB, 16, 2, &*ref.proj, Mode::kTrain);
  const auto want = relu(zip_elementwise(ZipOp::kAdd, main, sc));
  const auto got = bottleneck_block_forward(x, block, Mode::kTrain);
  EXPECT_EQ(got.shape(), (Shape{2, 16, 3, 3}));
  EXPECT_TRUE(bitwise_equal(got, want));
}

TEST(Blocks, CollectNamesAndCounts) {
  Rng rng(19);
  auto b = BasicBlockParams<float>::make(16, 32, 2, ShortcutKind::kProjectionB, rng);
  std::vector<ParamRef<float>> refs;
  b.collect("s.", refs);
  const std::int64_t want = 16 * 32 * 9 + 2 * 32 + 32 * 32 * 9 + 2 * 32 + 16 * 32 + 2 * 32;
  EXPECT_EQ(count_trainable<float>(refs), want);
  for (const auto& r : refs) EXPECT_EQ(r.name.rfind("s.", 0), 0u) << r.name;
}
