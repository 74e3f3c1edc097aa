#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "resnet/trainer.hpp"

namespace resnet {

struct DegradationPreset {
  std::string name;
  std::vector<int> depths;  // each 6n+2
  int seeds = 3;
  std::int64_t response_sample = 500;  // leading test images used for layer responses
  TrainConfig base;                    // arch.n and arch.residual are overwritten per cell
};

/// widths {8,16,32}, 8k CIFAR training images, 4k iterations with /10 at 2k
/// and 3k, batch 128, depths {20,56}, 3 seeds.
DegradationPreset desk_preset();
/// Full CIFAR recipe: widths {16,32,64}, 50k images, 64k iterations, depths {20,32,44,56}.
DegradationPreset full_preset();
/// Synthetic data and a few dozen iterations; exercises the pipeline only.
DegradationPreset smoke_preset();
DegradationPreset preset_by_name(const std::string& name);

struct RunResult {
  int depth = 0;
  bool residual = false;
  std::uint64_t seed = 0;
  std::int64_t params = 0;
  double final_train_error = 0.0;
  double final_test_error = 0.0;
  ResponseStats responses;
  TrainLog log;
};

struct CellSummary {
  int depth = 0;
  bool residual = false;
  std::int64_t params = 0;
  int runs = 0;
  double mean_train_error = 0.0;
  double mean_test_error = 0.0;
  double mean_response_median = 0.0;
};

struct DegradationReport {
  std::string preset;
  std::vector<RunResult> runs;

  std::vector<CellSummary> cells() const;
  /// Throws kValue if the cell was not run.
  CellSummary cell(int depth, bool residual) const;
  /// Per-cell means, preceded by a header line listing every cell's parameter count.
  std::string to_csv() const;
  /// One row per run and 3x3 layer.
  std::string responses_csv() const;
};

/// Trains every (depth, plain/residual, seed) cell on `data` and reports final
/// training error (smoothed), test error and layer-response statistics.
/// Needs at least two depths.
DegradationReport degradation_experiment(const DegradationPreset& preset, const TrainData& data,
                                         const std::function<void(const RunResult&)>& on_run = {});

/// The TrainConfig used for one cell of the experiment.
TrainConfig cell_config(const DegradationPreset& preset, int depth, bool residual, int seed_index);

}  // namespace resnet
