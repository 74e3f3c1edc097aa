#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "resnet/arch.hpp"
#include "resnet/cifar.hpp"
#include "resnet/optim.hpp"

namespace resnet {

struct ArchConfig {
  std::string family = "cifar";  // "cifar" or "imagenet"
  int n = 3;                     // cifar: blocks per stage
  int depth = 0;                 // imagenet: 18/34/50/101/152
  bool residual = true;
  ShortcutOption option = ShortcutOption::kA;
  std::array<std::int64_t, 3> widths{16, 32, 64};  // cifar only
  int classes = 10;

  NetworkSpec build() const;
};

struct DataConfig {
  std::string source = "synthetic";  // "cifar" or "synthetic"
  std::string dir;                   // cifar: directory with the binary batches
  std::int64_t train_images = 0;     // cifar: seeded subset of the 50k, 0 = all
  std::int64_t test_images = 0;      // cifar: leading slice of the 10k test set, 0 = all
  MeanMode mean = MeanMode::kPerPixel;
  bool augment = true;
  // synthetic
  int classes = 10;
  int per_class = 64;
  int test_per_class = 16;
  double noise = 0.5;
  std::uint64_t data_seed = 1;
};

struct TrainConfig {
  ArchConfig arch;
  OptHyper opt;
  double bn_momentum = kBatchNormMomentum;
  int batch_size = 128;
  std::int64_t total_iters = 64000;
  std::uint64_t seed = 0;
  std::int64_t eval_every = 1000;
  int log_window = 100;
  int eval_batch = 100;
  DataConfig data;

  /// Throws kConfig on any out-of-range field.
  void validate() const;
};

/// The CIFAR training recipe for a 6n+2 network: lr 0.1, momentum 0.9, decay
/// 1e-4, batch 128, /10 at 32k and 48k, stop at 64k; lr-0.01 warmup for n >= 18.
TrainConfig cifar_recipe(int n, bool residual);

std::string to_json(const TrainConfig& cfg, int indent = 2);
/// Strict: unknown keys and wrong types raise kConfig.
TrainConfig parse_config(const std::string& json);
TrainConfig load_config_file(const std::string& path);

}  // namespace resnet
