#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "resnet/blocks.hpp"

namespace resnet {

struct Warmup {
  double lr = 0.01;
  double exit_train_error = 0.80;
};

struct OptHyper {
  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<std::int64_t> milestones;  // strictly increasing iterations
  std::optional<Warmup> warmup;
  bool decay_all = true;  // false: weight decay on conv/linear weights only

  /// Throws kConfig when milestones are unsorted or momentum is outside [0,1).
  void validate() const;
};

/// warmup_active ? warmup.lr : base_lr / 10^(number of milestones <= iter)
double lr_at(const OptHyper& h, std::int64_t iter, bool warmup_active);

template <typename T>
struct OptState {
  std::vector<Tensor<T>> velocity;  // zero-initialized, one per trainable tensor

  static OptState zeros_for(std::span<const ParamRef<T>> params);
};

/// Heavy-ball step with decay folded into the gradient:
///   v <- momentum * v + g + wd * p;  p <- p - lr * v
/// params and grads align index by index; only trainable refs are updated.
/// Throws kNumeric on a non-finite gradient and kShape on misalignment.
template <typename T>
void sgd_step(std::span<const ParamRef<T>> params, std::span<const Tensor<T>> grads,
              OptState<T>& state, const OptHyper& h, double lr);

/// Latch over a running window of minibatch errors: active until the window
/// mean first drops below the exit threshold, then inactive forever.
class WarmupMonitor {
 public:
  explicit WarmupMonitor(double exit_train_error = 0.80, bool enabled = true)
      : threshold_(exit_train_error), active_(enabled) {}

  /// Feeds the current smoothed training error; returns whether warmup is still active.
  bool update(double train_error);
  bool active() const { return active_; }
  void force(bool active) { active_ = active; }

 private:
  double threshold_;
  bool active_;
};

/// Mean of the last `window` values pushed.
class RunningMean {
 public:
  explicit RunningMean(std::size_t window = 100) : window_(window) {}
  void push(double v);
  double mean() const;
  std::size_t window() const { return window_; }
  const std::deque<double>& values() const { return values_; }
  void restore(std::deque<double> values) { values_ = std::move(values); }

 private:
  std::size_t window_;
  std::deque<double> values_;
};

}  // namespace resnet
