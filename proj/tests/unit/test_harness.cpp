#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "resnet/checkpoint.hpp"
#include "resnet/config.hpp"
#include "resnet/experiment.hpp"
#include "resnet/trainer.hpp"

using namespace resnet;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny(int classes = 2) {
  TrainConfig c;
  c.arch.n = 1;
  c.arch.widths = {4, 8, 8};
  c.arch.classes = classes;
  c.data.source = "synthetic";
  c.data.classes = classes;
  c.data.per_class = 16;
  c.data.test_per_class = 8;
  c.batch_size = 16;
  c.total_iters = 24;
  c.eval_every = 8;
  c.log_window = 8;
  c.seed = 3;
  return c;
}

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.fingerprint = 0x1234abcd5678ef00ULL;
  c.iter = 17;
  c.meta = R"({"note":"x"})";
  c.tensors.emplace_back("a", TensorF({2, 3}, std::vector<float>{1, -2, 3.5f, 0, -0.0f, 1e-30f}));
  c.tensors.emplace_back("b", TensorD({4}, std::vector<double>{1e300, -1e-300, 0.1, 2}));
  return c;
}

}  // namespace

TEST(Config, JsonRoundTrip) {
  auto c = cifar_recipe(18, false);
  c.arch.option = ShortcutOption::kB;
  c.data.mean = MeanMode::kPerChannel;
  c.data.train_images = 8000;
  c.bn_momentum = 0.95;
  c.opt.decay_all = false;
  const auto text = to_json(c);
  const auto back = parse_config(text);
  EXPECT_EQ(to_json(back), text);
  ASSERT_TRUE(back.opt.warmup.has_value());
  EXPECT_EQ(back.opt.warmup->lr, 0.01);
  EXPECT_EQ(back.opt.milestones, (std::vector<std::int64_t>{32000, 48000}));
  EXPECT_EQ(back.arch.option, ShortcutOption::kB);
}

TEST(Config, StrictParsing) {
  EXPECT_THROW(parse_config(R"({"version":1,"bogus":3})"), Error);
  EXPECT_THROW(parse_config(R"({"version":1,"batch_size":"big"})"), Error);
  EXPECT_THROW(parse_config("{not json"), Error);
  EXPECT_THROW(parse_config(R"({"version":1,"total_iters":0})"), Error);
  try {
    parse_config(R"({"version":1,"arch":{"n":3,"wdiths":[1,2,3]}})");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
    EXPECT_NE(std::string(e.what()).find("wdiths"), std::string::npos);
  }
  const auto c = parse_config(R"({"version":1,"total_iters":5})");
  EXPECT_EQ(c.total_iters, 5);
  EXPECT_EQ(c.batch_size, 128);
}

TEST(Config, Recipe) {
  const auto c = cifar_recipe(3, true);
  EXPECT_EQ(c.opt.base_lr, 0.1);
  EXPECT_EQ(c.opt.momentum, 0.9);
  EXPECT_EQ(c.opt.weight_decay, 1e-4);
  EXPECT_EQ(c.batch_size, 128);
  EXPECT_EQ(c.total_iters, 64000);
  EXPECT_FALSE(c.opt.warmup.has_value());
  EXPECT_TRUE(cifar_recipe(18, true).opt.warmup.has_value());
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const auto c = sample_checkpoint();
  const auto bytes = save_checkpoint(c);
  const auto back = load_checkpoint(bytes, c.fingerprint);
  EXPECT_EQ(back.iter, 17u);
  EXPECT_EQ(back.meta, c.meta);
  ASSERT_EQ(back.tensors.size(), 2u);
  EXPECT_TRUE(bitwise_equal(back.get<float>("a"), std::get<TensorF>(c.tensors[0].second)));
  EXPECT_TRUE(bitwise_equal(back.get<double>("b"), std::get<TensorD>(c.tensors[1].second)));
  EXPECT_EQ(save_checkpoint(back), bytes);
  EXPECT_THROW(back.get<double>("a"), Error);
  EXPECT_THROW(back.get<float>("zzz"), Error);
}

TEST(Checkpoint, CorruptionIsDetected) {
  const auto bytes = save_checkpoint(sample_checkpoint());
  auto expect_kind = [](std::vector<std::uint8_t> b, ErrorKind kind) {
    try {
      load_checkpoint(b);
      ADD_FAILURE() << "accepted corrupt checkpoint";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), kind) << e.what();
    }
  };
  auto magic = bytes;
  magic[0] ^= 1;
  expect_kind(magic, ErrorKind::kFormat);
  auto version = bytes;
  version[8] = 9;
  expect_kind(version, ErrorKind::kFormat);
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{30}, bytes.size() - 1}) {
    expect_kind(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + cut), ErrorKind::kFormat);
  }
  auto trailing = bytes;
  trailing.push_back(0);
  expect_kind(trailing, ErrorKind::kFormat);
  try {
    load_checkpoint(bytes, 42);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValue);
  }
}

TEST(Checkpoint, RejectsNonFiniteAndDuplicates) {
  auto c = sample_checkpoint();
  std::get<TensorD>(c.tensors[1].second)[0] = std::nan("");
  EXPECT_THROW(save_checkpoint(c), Error);
  auto d = sample_checkpoint();
  d.tensors.emplace_back("a", TensorF({1}));
  EXPECT_THROW(save_checkpoint(d), Error);
}

TEST(Checkpoint, FileWriteIsAtomicAndReadable) {
  const fs::path dir = fs::temp_directory_path() / "resnet_ckpt_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto c = sample_checkpoint();
  write_checkpoint_file(dir / "x.ckpt", c);
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++files;
  EXPECT_EQ(files, 1u);
  EXPECT_EQ(save_checkpoint(read_checkpoint_file(dir / "x.ckpt")), save_checkpoint(c));
  EXPECT_THROW(read_checkpoint_file(dir / "missing.ckpt"), Error);
  fs::remove_all(dir);
}

TEST(Trainer, BatchIndicesCoverEpochs) {
  const auto cfg = tiny();
  const auto data = prepare_data(cfg);
  Trainer t(cfg, data);
  // 32 training images, batch 16: iterations 0 and 1 form one epoch.
  auto a = t.batch_indices(0), b = t.batch_indices(1);
  a.insert(a.end(), b.begin(), b.end());
  std::sort(a.begin(), a.end());
  for (std::int64_t i = 0; i < 32; ++i) EXPECT_EQ(a[i], i);
  EXPECT_NE(t.batch_indices(0), t.batch_indices(2));
  EXPECT_EQ(t.batch_indices(5), Trainer(cfg, data).batch_indices(5));
}

TEST(Trainer, DataPreparation) {
  const auto cfg = tiny(3);
  const auto d = prepare_data(cfg);
  EXPECT_EQ(d.train.size(), 48);
  EXPECT_EQ(d.test.size(), 24);
  // Train mean is (close to) zero after normalization; test uses the same mean.
  double s = 0.0;
  for (float v : d.train.images.data()) s += v;
  EXPECT_NEAR(s / d.train.images.size(), 0.0, 1e-6);
  EXPECT_TRUE(bitwise_equal(d.train.mean, d.test.mean));
  auto bad = cfg;
  bad.data.source = "cifar";
  bad.data.dir = "/nonexistent";
  try {
    prepare_data(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIo);
  }
}

TEST(Trainer, DeterministicLog) {
  const auto cfg = tiny();
  const auto data = prepare_data(cfg);
  Trainer a(cfg, data), b(cfg, data);
  a.run();
  b.run();
  EXPECT_EQ(a.log().to_csv(), b.log().to_csv());
  ASSERT_EQ(a.log().rows.size(), 3u);
  EXPECT_EQ(a.log().rows[0].iter, 8);
  EXPECT_TRUE(a.log().rows.back().test_error.has_value());
  auto other = cfg;
  other.seed = 4;
  Trainer c(other, data);
  c.run();
  EXPECT_NE(a.log().to_csv(), c.log().to_csv());
}

TEST(Trainer, ResumeIsBitwiseTransparent) {
  const auto cfg = tiny();
  const auto data = prepare_data(cfg);
  Trainer full(cfg, data);
  full.run();

  Trainer first(cfg, data);
  first.run(13);
  const auto bytes = save_checkpoint(first.checkpoint());
  Trainer second(cfg, data);
  second.restore(load_checkpoint(bytes, second.network().fingerprint()));
  EXPECT_EQ(second.iter(), 13);
  second.run();
  EXPECT_EQ(second.log().to_csv(), full.log().to_csv());
  const auto pa = full.network().params(), pb = second.network().params();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(bitwise_equal(*pa[i].tensor, *pb[i].tensor)) << pa[i].name;
  EXPECT_EQ(save_checkpoint(full.checkpoint()), save_checkpoint(second.checkpoint()));
}

TEST(Trainer, RestoreRejectsOtherConfig) {
  const auto cfg = tiny();
  const auto data = prepare_data(cfg);
  Trainer a(cfg, data);
  a.run(3);
  auto other = cfg;
  other.opt.base_lr = 0.05;
  Trainer b(other, data);
  EXPECT_THROW(b.restore(a.checkpoint()), Error);
  auto longer = cfg;
  longer.total_iters = 100;
  Trainer c(longer, data);
  EXPECT_NO_THROW(c.restore(a.checkpoint()));
}

TEST(Trainer, SeparableTwoClassReachesZeroError) {
  auto cfg = tiny();
  cfg.data.noise = 0.1;
  cfg.data.augment = false;
  cfg.total_iters = 200;
  cfg.eval_every = 50;
  cfg.log_window = 20;
  const auto data = prepare_data(cfg);
  Trainer t(cfg, data);
  t.run();
  EXPECT_EQ(t.log().rows.back().train_error, 0.0);
  EXPECT_EQ(evaluate(t.network(), data.train), 0.0);
}

TEST(Trainer, NumericAbortKeepsSnapshot) {
  auto cfg = tiny();
  cfg.opt.base_lr = 1e30;
  cfg.opt.momentum = 0.0;
  const auto data = prepare_data(cfg);
  Trainer t(cfg, data);
  try {
    t.run();
    FAIL() << "expected a numeric abort";
  } catch (const NumericAbort& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
    EXPECT_EQ(e.snapshot().iter, static_cast<std::uint64_t>(t.iter()));
    EXPECT_NO_THROW(save_checkpoint(e.snapshot()));
  }
}

TEST(Evaluate, MatchesHandLoop) {
  const auto cfg = tiny(3);
  const auto data = prepare_data(cfg);
  NetworkF net(cfg.arch.build(), 9);
  const double err = evaluate(net, data.test, 7);
  const auto logits = net.logits(data.test.images, Mode::kInfer);
  std::int64_t wrong = 0;
  for (std::int64_t i = 0; i < data.test.size(); ++i) {
    int best = 0;
    for (int k = 1; k < 3; ++k) {
      if (logits.at({i, k}) > logits.at({i, best})) best = k;
    }
    wrong += best != data.test.labels[i];
  }
  EXPECT_DOUBLE_EQ(err, static_cast<double>(wrong) / data.test.size());
}

TEST(Evaluate, ConstantLogitsGiveChance) {
  auto cfg = tiny(10);
  cfg.data.test_per_class = 10;
  const auto data = prepare_data(cfg);
  NetworkF net(cfg.arch.build(), 1);
  for (auto& r : net.params()) {
    if (r.name == "fc.weight") r.tensor->fill(0.0f);
  }
  EXPECT_DOUBLE_EQ(evaluate(net, data.test), 0.9);
}

TEST(LayerResponse, UnitStdInTrainModeAndZeroForConstant) {
  const auto cfg = tiny();
  const auto data = prepare_data(cfg);
  NetworkF net(cfg.arch.build(), 2);
  const auto stats = layer_response_std(net, leading_images(data.train, 32), Mode::kTrain, 32);
  EXPECT_EQ(stats.in_order.size(), 7u);  // stem plus two per block
  for (const auto& l : stats.in_order) EXPECT_NEAR(l.std, 1.0, 1e-3) << l.layer;
  for (std::size_t i = 1; i < stats.descending.size(); ++i) {
    EXPECT_GE(stats.descending[i - 1].std, stats.descending[i].std);
  }
  EXPECT_NE(stats.to_csv().find("layer"), std::string::npos);

  NetworkF zero(cfg.arch.build(), 2);
  for (auto& r : zero.params()) {
    if (r.is_weight && r.trainable) r.tensor->fill(0.0f);
  }
  const auto z = layer_response_std(zero, TensorF({4, 3, 32, 32}, 0.7f));
  for (const auto& l : z.in_order) EXPECT_EQ(l.std, 0.0) << l.layer;
  EXPECT_EQ(z.median(), 0.0);
}

TEST(Model, CheckpointRebuildsNetwork) {
  const auto cfg = tiny();
  const auto data = prepare_data(cfg);
  Trainer t(cfg, data);
  t.run(5);
  auto m = load_model(t.checkpoint());
  EXPECT_EQ(to_json(m.config), to_json(cfg));
  EXPECT_TRUE(bitwise_equal(m.net.logits(data.test.images, Mode::kInfer),
                            t.network().logits(data.test.images, Mode::kInfer)));
}

TEST(Degradation, SmokePreset) {
  auto preset = smoke_preset();
  const auto data = prepare_data(cell_config(preset, preset.depths.front(), true, 0));
  int calls = 0;
  const auto report = degradation_experiment(preset, data, [&](const RunResult&) { ++calls; });
  EXPECT_EQ(calls, 4);
  const auto cells = report.cells();
  ASSERT_EQ(cells.size(), 4u);
  EXPECT_EQ(report.cell(8, false).params, report.cell(8, true).params);
  EXPECT_LT(report.cell(8, true).params, report.cell(14, true).params);
  EXPECT_NE(report.to_csv().find("plain,14,1,"), std::string::npos);
  EXPECT_THROW(report.cell(20, true), Error);
  EXPECT_EQ(cell_config(preset, 110, true, 0).arch.n, 18);
  EXPECT_TRUE(cell_config(desk_preset(), 110, true, 0).opt.warmup.has_value());
  EXPECT_THROW(cell_config(preset, 21, true, 0), Error);
}
