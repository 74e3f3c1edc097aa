#include "resnet/optim.hpp"

#include <cmath>
#include <numeric>

namespace resnet {

void OptHyper::validate() const {
  if (!(base_lr > 0.0)) throw Error(ErrorKind::kConfig, "base_lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw Error(ErrorKind::kConfig, "momentum must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw Error(ErrorKind::kConfig, "weight_decay must be >= 0");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] < 0 || (i > 0 && milestones[i] <= milestones[i - 1])) {
      throw Error(ErrorKind::kConfig, "milestones must be non-negative and strictly increasing");
    }
  }
  if (warmup && !(warmup->lr > 0.0 && warmup->exit_train_error > 0.0 &&
                  warmup->exit_train_error <= 1.0)) {
    throw Error(ErrorKind::kConfig, "warmup needs lr > 0 and exit_train_error in (0, 1]");
  }
}

double lr_at(const OptHyper& h, std::int64_t iter, bool warmup_active) {
  if (iter < 0) throw Error(ErrorKind::kValue, "lr_at: negative iteration");
  if (warmup_active && h.warmup) return h.warmup->lr;
  double lr = h.base_lr;
  for (auto m : h.milestones) {
    if (m <= iter) lr /= 10.0;
  }
  return lr;
}

template <typename T>
OptState<T> OptState<T>::zeros_for(std::span<const ParamRef<T>> params) {
  OptState s;
  for (const auto& p : params) {
    if (p.trainable) s.velocity.push_back(zeros_like(*p.tensor));
  }
  return s;
}

template <typename T>
void sgd_step(std::span<const ParamRef<T>> params, std::span<const Tensor<T>> grads,
              OptState<T>& state, const OptHyper& h, double lr) {
  std::size_t k = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    if (i >= grads.size() || k >= state.velocity.size()) {
      throw Error(ErrorKind::kShape, "sgd_step: fewer gradients or velocities than parameters");
    }
    Tensor<T>& p = *params[i].tensor;
    const Tensor<T>& g = grads[i];
    Tensor<T>& v = state.velocity[k++];
    if (g.shape() != p.shape() || v.shape() != p.shape()) {
      throw Error(ErrorKind::kShape, "sgd_step: " + params[i].name + " expects " +
                                         shape_string(p.shape()) + ", gradient is " +
                                         shape_string(g.shape()));
    }
    const T m = static_cast<T>(h.momentum);
    const T wd = (h.decay_all || params[i].is_weight) ? static_cast<T>(h.weight_decay) : T(0);
    const T step = static_cast<T>(lr);
    T* pp = p.ptr();
    T* vp = v.ptr();
    const T* gp = g.ptr();
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (!std::isfinite(gp[j])) {
        throw Error(ErrorKind::kNumeric, "sgd_step: non-finite gradient in " + params[i].name +
                                             " at element " + std::to_string(j));
      }
      vp[j] = m * vp[j] + gp[j] + wd * pp[j];
      pp[j] -= step * vp[j];
    }
  }
  if (k != state.velocity.size()) {
    throw Error(ErrorKind::kShape, "sgd_step: velocity count does not match trainable parameters");
  }
}

bool WarmupMonitor::update(double train_error) {
  if (active_ && train_error < threshold_) active_ = false;
  return active_;
}

void RunningMean::push(double v) {
  values_.push_back(v);
  while (values_.size() > window_) values_.pop_front();
}

double RunningMean::mean() const {
  if (values_.empty()) return 0.0;
  return std::accumulate(values_.begin(), values_.end(), 0.0) / static_cast<double>(values_.size());
}

template struct OptState<float>;
template struct OptState<double>;
template void sgd_step<float>(std::span<const ParamRef<float>>, std::span<const TensorF>,
                              OptState<float>&, const OptHyper&, double);
template void sgd_step<double>(std::span<const ParamRef<double>>, std::span<const TensorD>,
                               OptState<double>&, const OptHyper&, double);

}  // namespace resnet
