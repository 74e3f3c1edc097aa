#pragma once

// Brute-force reference implementations. Each one is written directly from the
// definition with plain loops and shares no code with the library kernels.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "resnet/tensor.hpp"

namespace oracle {

using resnet::Shape;
using resnet::TensorD;

template <typename T = double>
resnet::Tensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  resnet::Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(normal(rng));
  return t;
}

/// max |a - b| / max(max |b|, tiny); zero when both are empty of magnitude.
template <typename T>
double rel_err(const resnet::Tensor<T>& a, const resnet::Tensor<T>& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    scale = std::max(scale, std::abs(static_cast<double>(b[i])));
  }
  return diff / std::max(scale, 1e-300);
}

inline std::int64_t out_extent(std::int64_t in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

/// Direct cross-correlation with zero padding.
inline TensorD conv2d(const TensorD& x, const TensorD& w, int stride, int pad) {
  const auto n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto co = w.dim(0);
  const int k = static_cast<int>(w.dim(2));
  const auto oh = out_extent(h, k, stride, pad), ow = out_extent(wd, k, stride, pad);
  TensorD y({n, co, oh, ow});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t o = 0; o < co; ++o)
      for (std::int64_t oy = 0; oy < oh; ++oy)
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (std::int64_t c = 0; c < ci; ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const std::int64_t iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += x.at({b, c, iy, ix}) * w.at({o, c, ky, kx});
              }
          y.at({b, o, oy, ox}) = acc;
        }
  return y;
}

/// Gradients of sum(dy * conv2d(x, w)) with respect to x and w.
inline void conv2d_backward(const TensorD& x, const TensorD& w, int stride, int pad,
                            const TensorD& dy, TensorD& dx, TensorD& dw) {
  dx = TensorD(x.shape());
  dw = TensorD(w.shape());
  const auto n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto co = w.dim(0);
  const int k = static_cast<int>(w.dim(2));
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t o = 0; o < co; ++o)
      for (std::int64_t oy = 0; oy < dy.dim(2); ++oy)
        for (std::int64_t ox = 0; ox < dy.dim(3); ++ox) {
          const double g = dy.at({b, o, oy, ox});
          for (std::int64_t c = 0; c < ci; ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const std::int64_t iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                dx.at({b, c, iy, ix}) += g * w.at({o, c, ky, kx});
                dw.at({o, c, ky, kx}) += g * x.at({b, c, iy, ix});
              }
        }
}

inline TensorD matmul(const TensorD& a, const TensorD& b) {
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  TensorD c({m, n});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t p = 0; p < k; ++p) acc += a.at({i, p}) * b.at({p, j});
      c.at({i, j}) = acc;
    }
  return c;
}

/// Window maximum over in-bounds taps only.
inline TensorD maxpool(const TensorD& x, int k, int stride, int pad) {
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto oh = out_extent(h, k, stride, pad), ow = out_extent(w, k, stride, pad);
  TensorD y({n, c, oh, ow});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t oy = 0; oy < oh; ++oy)
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          double best = -std::numeric_limits<double>::infinity();
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const std::int64_t iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              best = std::max(best, x.at({b, ch, iy, ix}));
            }
          y.at({b, ch, oy, ox}) = best;
        }
  return y;
}

inline TensorD global_avg_pool(const TensorD& x) {
  TensorD y({x.dim(0), x.dim(1)});
  for (std::int64_t b = 0; b < x.dim(0); ++b)
    for (std::int64_t c = 0; c < x.dim(1); ++c) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < x.dim(2); ++i)
        for (std::int64_t j = 0; j < x.dim(3); ++j) acc += x.at({b, c, i, j});
      y.at({b, c}) = acc / static_cast<double>(x.dim(2) * x.dim(3));
    }
  return y;
}

/// Softmax first, then the mean negative log of the labelled probability.
inline double softmax_xent(const TensorD& logits, const std::vector<int>& labels) {
  double loss = 0.0;
  for (std::int64_t i = 0; i < logits.dim(0); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < logits.dim(1); ++j) mx = std::max(mx, logits.at({i, j}));
    double z = 0.0;
    for (std::int64_t j = 0; j < logits.dim(1); ++j) z += std::exp(logits.at({i, j}) - mx);
    loss -= std::log(std::exp(logits.at({i, labels[i]}) - mx) / z);
  }
  return loss / static_cast<double>(logits.dim(0));
}

inline TensorD softmax_xent_grad(const TensorD& logits, const std::vector<int>& labels) {
  TensorD g(logits.shape());
  const double n = static_cast<double>(logits.dim(0));
  for (std::int64_t i = 0; i < logits.dim(0); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < logits.dim(1); ++j) mx = std::max(mx, logits.at({i, j}));
    double z = 0.0;
    for (std::int64_t j = 0; j < logits.dim(1); ++j) z += std::exp(logits.at({i, j}) - mx);
    for (std::int64_t j = 0; j < logits.dim(1); ++j) {
      g.at({i, j}) = (std::exp(logits.at({i, j}) - mx) / z - (j == labels[i] ? 1.0 : 0.0)) / n;
    }
  }
  return g;
}

/// Two-pass batch statistics per channel, biased variance.
inline TensorD batchnorm_train(const TensorD& x, const TensorD& gamma, const TensorD& beta,
                               double eps, std::vector<double>* mean_out = nullptr,
                               std::vector<double>* var_out = nullptr) {
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const double m = static_cast<double>(n * h * w);
  TensorD y(x.shape());
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double mean = 0.0;
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) mean += x.at({b, ch, i, j});
    mean /= m;
    double var = 0.0;
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) var += (x.at({b, ch, i, j}) - mean) * (x.at({b, ch, i, j}) - mean);
    var /= m;
    if (mean_out) mean_out->push_back(mean);
    if (var_out) var_out->push_back(var);
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) {
          y.at({b, ch, i, j}) =
              gamma[ch] * (x.at({b, ch, i, j}) - mean) / std::sqrt(var + eps) + beta[ch];
        }
  }
  return y;
}

// ---------------------------------------------------------------------------
// Counting by hand, layer by layer, for the CIFAR 6n+2 family.

struct Counts {
  std::int64_t params = 0;
  std::int64_t madds = 0;
};

/// Option A shortcuts (no parameters) or plain. 32x32 input.
inline Counts cifar_counts(int n, std::array<std::int64_t, 3> w = {16, 32, 64}, int classes = 10) {
  Counts c;
  std::int64_t hw = 32;
  auto conv = [&](std::int64_t cin, std::int64_t cout, int k, std::int64_t out_hw) {
    c.params += cin * cout * k * k;
    c.madds += out_hw * out_hw * cout * cin * k * k;
  };
  auto bn = [&](std::int64_t ch) { c.params += 2 * ch; };
  conv(3, w[0], 3, hw);
  bn(w[0]);
  std::int64_t in = w[0];
  for (int stage = 0; stage < 3; ++stage) {
    for (int b = 0; b < n; ++b) {
      if (stage > 0 && b == 0) hw /= 2;
      conv(in, w[stage], 3, hw);
      bn(w[stage]);
      conv(w[stage], w[stage], 3, hw);
      bn(w[stage]);
      in = w[stage];
    }
  }
  c.params += w[2] * classes + classes;
  c.madds += w[2] * classes;
  return c;
}

}  // namespace oracle
