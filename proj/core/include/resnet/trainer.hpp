#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "resnet/checkpoint.hpp"
#include "resnet/config.hpp"
#include "resnet/network.hpp"

namespace resnet {

/// Mean-subtracted train and test sets for one configuration.
struct TrainData {
  Dataset train;
  Dataset test;
};

/// Loads CIFAR-10 (optionally a seeded subset) or builds the synthetic set.
/// The mean comes from the training portion only. A non-empty `dir_override`
/// replaces cfg.data.dir.
TrainData prepare_data(const TrainConfig& cfg, const std::string& dir_override = {});

/// splitmix64 of (a, b); derives independent seeds for each random stream.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

struct LogRow {
  std::int64_t iter = 0;
  double lr = 0.0;
  double train_error = 0.0;  // running mean over the log window
  double train_loss = 0.0;   // running mean over the log window
  std::optional<double> test_error;
};

struct TrainLog {
  std::string arch;
  std::uint64_t seed = 0;
  int window = 100;
  std::vector<LogRow> rows;

  /// '#' header lines, then iter,lr,train_error,train_loss,test_error with 17 significant digits.
  std::string to_csv() const;
};

/// Raised when the loss or a gradient turns non-finite. `snapshot` holds the
/// state from just before the failing update.
class NumericAbort : public Error {
 public:
  NumericAbort(const std::string& what, Checkpoint snapshot)
      : Error(ErrorKind::kNumeric, what), snapshot_(std::move(snapshot)) {}
  const Checkpoint& snapshot() const { return snapshot_; }

 private:
  Checkpoint snapshot_;
};

/// Single-threaded SGD loop. Batch contents and augmentation depend only on
/// (seed, iteration), so a run restored from a checkpoint continues exactly.
class Trainer {
 public:
  /// `data` must outlive the trainer.
  Trainer(TrainConfig cfg, const TrainData& data);

  const TrainConfig& config() const { return cfg_; }
  NetworkF& network() { return net_; }
  std::int64_t iter() const { return iter_; }
  const TrainLog& log() const { return log_; }
  bool warmup_active() const { return warmup_.active(); }
  double smoothed_train_error() const { return errors_.mean(); }

  /// Training-set indices for iteration `iter`: consecutive slices of a
  /// per-epoch seeded permutation.
  std::vector<std::int64_t> batch_indices(std::int64_t iter) const;

  /// One SGD update; appends a log row every eval_every iterations and at the end.
  void step();
  /// Steps until `until` (default: total_iters). `on_log` sees each new row.
  void run(std::int64_t until = -1, const std::function<void(const LogRow&)>& on_log = {});

  Checkpoint checkpoint();
  /// Restores weights, buffers, velocities, windows, warmup latch and log.
  /// The checkpoint's config must match this trainer's apart from total_iters.
  void restore(const Checkpoint& ckpt);

 private:
  TrainConfig cfg_;
  const TrainData& data_;
  NetworkF net_;
  std::vector<ParamRef<float>> params_;  // trainable first, then BN buffers
  OptState<float> opt_;
  RunningMean errors_;
  RunningMean losses_;
  WarmupMonitor warmup_;
  TrainLog log_;
  std::int64_t iter_ = 0;
  mutable std::int64_t perm_epoch_ = -1;
  mutable std::vector<std::int64_t> perm_;
};

/// Top-1 error with BN in inference mode on the un-augmented images.
double evaluate(NetworkF& net, const Dataset& data, int batch = 100);

struct LayerResponse {
  std::string layer;
  double std = 0.0;
};

struct ResponseStats {
  std::vector<LayerResponse> in_order;    // network order
  std::vector<LayerResponse> descending;  // sorted by std, largest first
  double median() const;
  std::string to_csv() const;
};

/// Population std of every 3x3 convolution's output after BN and before the
/// nonlinearity, pooled over all elements of the sample.
ResponseStats layer_response_std(NetworkF& net, const TensorF& sample, Mode mode = Mode::kInfer,
                                 int batch = 100);

/// The first `count` images of `d` (all when count exceeds the size).
TensorF leading_images(const Dataset& d, std::int64_t count);

/// Rebuilds the configuration and network stored in a checkpoint.
struct LoadedModel {
  TrainConfig config;
  NetworkF net;
};
LoadedModel load_model(const Checkpoint& ckpt);

}  // namespace resnet
