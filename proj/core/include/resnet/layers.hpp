#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "resnet/tensor.hpp"

namespace resnet {

using Rng = std::mt19937_64;

enum class Mode { kTrain, kInfer };

/// Bias-free convolution weights [C_out, C_in, k, k]. Every convolution in the
/// model is followed by batch normalization, whose shift replaces the bias.
template <typename T>
struct ConvParams {
  Tensor<T> weight;
  int stride = 1;
  int pad = 0;

  int kernel() const { return static_cast<int>(weight.dim(2)); }
  std::int64_t in_channels() const { return weight.dim(1); }
  std::int64_t out_channels() const { return weight.dim(0); }
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

/// gamma/beta are trainable; running statistics are updated as
/// running <- momentum * running + (1 - momentum) * batch in train mode.
/// The batch variance is the biased (1/M) estimator, and running_var stores the same.
template <typename T>
struct BNParams {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double eps = kBatchNormEps;
  double momentum = kBatchNormMomentum;

  static BNParams make(std::int64_t channels, double eps = kBatchNormEps,
                       double momentum = kBatchNormMomentum);
  std::int64_t channels() const { return gamma.dim(0); }
};

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // [C_in, C_out]
  Tensor<T> bias;    // [C_out]
};

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip) lowered onto im2col + GEMM.

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, int stride, int pad);

/// Overwrites *dx and *dweight when the pointers are non-null.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, int stride, int pad,
                     const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dweight);

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p) {
  return conv2d_forward(x, p.weight, p.stride, p.pad);
}

// ---------------------------------------------------------------------------
// Batch normalization over (N, H, W) per channel.

template <typename T>
struct BNCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
  Mode mode = Mode::kTrain;
};

/// Train mode normalizes with batch statistics and updates the running
/// statistics in `running`; infer mode uses the running statistics.
/// gamma and beta are passed separately so autodiff can supply its own copies.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                            BNParams<T>& running, Mode mode, BNCache<T>* cache);

template <typename T>
void batchnorm_backward(const Tensor<T>& dy, const Tensor<T>& gamma, const BNCache<T>& cache,
                        Tensor<T>* dx, Tensor<T>* dgamma, Tensor<T>* dbeta);

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, BNParams<T>& p, Mode mode) {
  return batchnorm_forward<T>(x, p.gamma, p.beta, p, mode, nullptr);
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// Subgradient at 0 is 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy);

/// Windowed max with implicit -inf padding. Out-of-range taps never win.
/// `argmax` (optional) receives the flat input index selected for every output.
template <typename T>
Tensor<T> maxpool(const Tensor<T>& x, int k = 3, int stride = 2, int pad = 1,
                  std::vector<std::int64_t>* argmax = nullptr);

/// Routes each output gradient to its recorded argmax (first row-major maximum on ties).
template <typename T>
Tensor<T> maxpool_backward(const Shape& x_shape, std::span<const std::int64_t> argmax,
                           const Tensor<T>& dy);

/// [N,C,H,W] -> [N,C] mean over the spatial plane.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& x_shape, const Tensor<T>& dy);

/// x[N,C_in] * W[C_in,C_out] + b
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p);

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy,
                     Tensor<T>* dx, Tensor<T>* dweight, Tensor<T>* dbias);

/// Mean over the batch of -log softmax(logits)[label], computed with max subtraction.
template <typename T>
T softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// (softmax - onehot) / N
template <typename T>
Tensor<T> softmax_cross_entropy_backward(const Tensor<T>& logits, std::span<const int> labels);

/// Row-wise argmax (first maximum on ties).
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits);

// ---------------------------------------------------------------------------
// He initialization: zero-mean normal with std sqrt(2 / fan_in).

double he_std(std::int64_t fan_in);

/// Conv weights [C_out, C_in, k, k]; fan_in = C_in * k * k.
template <typename T>
Tensor<T> he_init(const Shape& shape, Rng& rng);

/// Linear weights [C_in, C_out]; fan_in = C_in.
template <typename T>
Tensor<T> he_init_linear(std::int64_t in_features, std::int64_t out_features, Rng& rng);

template <typename T>
ConvParams<T> make_conv(std::int64_t in_channels, std::int64_t out_channels, int k, int stride,
                        Rng& rng);

template <typename T>
LinearParams<T> make_linear(std::int64_t in_features, std::int64_t out_features, Rng& rng);

}  // namespace resnet
