#include "resnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gemm.hpp"

namespace resnet {
namespace {

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* what) {
  if (t.empty() || t.rank() != rank) {
    throw Error(ErrorKind::kShape, std::string(what) + ": expected rank " + std::to_string(rank) +
                                       " input, got " + shape_string(t.shape()));
  }
}

bool is_pointwise(int k, int stride, int pad) { return k == 1 && stride == 1 && pad == 0; }

}  // namespace

template <typename T>
BNParams<T> BNParams<T>::make(std::int64_t channels, double eps, double momentum) {
  BNParams p;
  p.gamma = Tensor<T>({channels}, T(1));
  p.beta = Tensor<T>({channels}, T(0));
  p.running_mean = Tensor<T>({channels}, T(0));
  p.running_var = Tensor<T>({channels}, T(1));
  p.eps = eps;
  p.momentum = momentum;
  return p;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, int stride, int pad) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t c_out = weight.dim(0);
  const int k = static_cast<int>(weight.dim(2));
  if (weight.dim(1) != c) {
    throw Error(ErrorKind::kShape, "conv2d: input has " + std::to_string(c) +
                                       " channels, weight expects " + std::to_string(weight.dim(1)));
  }
  if (weight.dim(3) != k) throw Error(ErrorKind::kShape, "conv2d: kernel must be square");
  const std::int64_t oh = window_out_extent(h, k, stride, pad);
  const std::int64_t ow = window_out_extent(w, k, stride, pad);
  const int spatial = static_cast<int>(oh * ow);
  const int patch = static_cast<int>(c * k * k);

  Tensor<T> out({n, c_out, oh, ow});
  if (is_pointwise(k, stride, pad)) {
    for (std::int64_t i = 0; i < n; ++i) {
      detail::gemm(false, false, static_cast<int>(c_out), spatial, patch, T(1), weight.ptr(), patch,
                   x.ptr() + i * c * h * w, spatial, T(0), out.ptr() + i * c_out * spatial, spatial);
    }
    return out;
  }
  std::vector<T> cols(static_cast<std::size_t>(spatial) * patch);
  for (std::int64_t i = 0; i < n; ++i) {
    detail::im2col_image(x.ptr() + i * c * h * w, c, h, w, k, stride, pad, cols.data());
    // out_i [C_out, Ho*Wo] = W [C_out, C*k*k] * cols^T
    detail::gemm(false, true, static_cast<int>(c_out), spatial, patch, T(1), weight.ptr(), patch,
                 cols.data(), patch, T(0), out.ptr() + i * c_out * spatial, spatial);
  }
  return out;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, int stride, int pad,
                     const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dweight) {
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t c_out = weight.dim(0);
  const int k = static_cast<int>(weight.dim(2));
  const std::int64_t oh = window_out_extent(h, k, stride, pad);
  const std::int64_t ow = window_out_extent(w, k, stride, pad);
  if (dy.shape() != Shape{n, c_out, oh, ow}) {
    throw Error(ErrorKind::kShape, "conv2d_backward: gradient shape " + shape_string(dy.shape()));
  }
  const int spatial = static_cast<int>(oh * ow);
  const int patch = static_cast<int>(c * k * k);
  const int cout = static_cast<int>(c_out);

  if (dweight) *dweight = Tensor<T>(weight.shape(), T(0));
  if (dx) *dx = Tensor<T>(x.shape(), T(0));

  if (is_pointwise(k, stride, pad)) {
    for (std::int64_t i = 0; i < n; ++i) {
      const T* g = dy.ptr() + i * c_out * spatial;
      const T* xi = x.ptr() + i * c * spatial;
      if (dweight) {
        detail::gemm(false, true, cout, patch, spatial, T(1), g, spatial, xi, spatial, T(1),
                     dweight->ptr(), patch);
      }
      if (dx) {
        detail::gemm(true, false, patch, spatial, cout, T(1), weight.ptr(), patch, g, spatial, T(0),
                     dx->ptr() + i * c * spatial, spatial);
      }
    }
    return;
  }

  std::vector<T> cols(static_cast<std::size_t>(spatial) * patch);
  for (std::int64_t i = 0; i < n; ++i) {
    const T* g = dy.ptr() + i * c_out * spatial;
    if (dweight) {
      detail::im2col_image(x.ptr() + i * c * h * w, c, h, w, k, stride, pad, cols.data());
      // dW [C_out, patch] += dy_i [C_out, spatial] * cols [spatial, patch]
      detail::gemm(false, false, cout, patch, spatial, T(1), g, spatial, cols.data(), patch, T(1),
                   dweight->ptr(), patch);
    }
    if (dx) {
      // dcols [spatial, patch] = dy_i^T * W
      detail::gemm(true, false, spatial, patch, cout, T(1), g, spatial, weight.ptr(), patch, T(0),
                   cols.data(), patch);
      detail::col2im_image(cols.data(), c, h, w, k, stride, pad, dx->ptr() + i * c * h * w);
    }
  }
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                            BNParams<T>& running, Mode mode, BNCache<T>* cache) {
  require_rank(x, 4, "batchnorm");
  const std::int64_t n = x.dim(0), c = x.dim(1);
  const std::int64_t plane = x.dim(2) * x.dim(3);
  const std::int64_t m = n * plane;
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c} ||
      running.running_mean.shape() != Shape{c} || running.running_var.shape() != Shape{c}) {
    throw Error(ErrorKind::kShape, "batchnorm: parameters do not match " + std::to_string(c) +
                                       " channels");
  }
  if (mode == Mode::kTrain && m < 2) {
    throw Error(ErrorKind::kValue, "batchnorm: train mode needs at least 2 values per channel");
  }

  Tensor<T> out(x.shape());
  std::vector<T> inv_std(static_cast<std::size_t>(c));
  Tensor<T> xhat;
  if (cache) xhat = Tensor<T>(x.shape());

  for (std::int64_t ch = 0; ch < c; ++ch) {
    double mean, var;
    if (mode == Mode::kTrain) {
      double sum = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const T* p = x.ptr() + (i * c + ch) * plane;
        for (std::int64_t j = 0; j < plane; ++j) sum += p[j];
      }
      mean = sum / static_cast<double>(m);
      double sq = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const T* p = x.ptr() + (i * c + ch) * plane;
        for (std::int64_t j = 0; j < plane; ++j) {
          const double d = p[j] - mean;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(m);
      const double mom = running.momentum;
      running.running_mean[ch] =
          static_cast<T>(mom * running.running_mean[ch] + (1.0 - mom) * mean);
      running.running_var[ch] = static_cast<T>(mom * running.running_var[ch] + (1.0 - mom) * var);
    } else {
      mean = running.running_mean[ch];
      var = running.running_var[ch];
    }
    const double istd = 1.0 / std::sqrt(var + running.eps);
    inv_std[ch] = static_cast<T>(istd);
    const T g = gamma[ch], b = beta[ch];
    const T mu = static_cast<T>(mean), is = static_cast<T>(istd);
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t base = (i * c + ch) * plane;
      const T* p = x.ptr() + base;
      T* o = out.ptr() + base;
      if (cache) {
        T* xh = xhat.ptr() + base;
        for (std::int64_t j = 0; j < plane; ++j) {
          xh[j] = (p[j] - mu) * is;
          o[j] = g * xh[j] + b;
        }
      } else {
        for (std::int64_t j = 0; j < plane; ++j) o[j] = g * ((p[j] - mu) * is) + b;
      }
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return out;
}

template <typename T>
void batchnorm_backward(const Tensor<T>& dy, const Tensor<T>& gamma, const BNCache<T>& cache,
                        Tensor<T>* dx, Tensor<T>* dgamma, Tensor<T>* dbeta) {
  const Tensor<T>& xhat = cache.xhat;
  if (dy.shape() != xhat.shape()) {
    throw Error(ErrorKind::kShape, "batchnorm_backward: gradient shape mismatch");
  }
  const std::int64_t n = dy.dim(0), c = dy.dim(1);
  const std::int64_t plane = dy.dim(2) * dy.dim(3);
  const double m = static_cast<double>(n * plane);
  if (dx) *dx = Tensor<T>(dy.shape());
  if (dgamma) *dgamma = Tensor<T>({c});
  if (dbeta) *dbeta = Tensor<T>({c});

  for (std::int64_t ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t base = (i * c + ch) * plane;
      const T* g = dy.ptr() + base;
      const T* xh = xhat.ptr() + base;
      for (std::int64_t j = 0; j < plane; ++j) {
        sum_dy += g[j];
        sum_dy_xhat += static_cast<double>(g[j]) * xh[j];
      }
    }
    if (dgamma) (*dgamma)[ch] = static_cast<T>(sum_dy_xhat);
    if (dbeta) (*dbeta)[ch] = static_cast<T>(sum_dy);
    if (!dx) continue;
    const double scale = static_cast<double>(gamma[ch]) * cache.inv_std[ch];
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t base = (i * c + ch) * plane;
      const T* g = dy.ptr() + base;
      const T* xh = xhat.ptr() + base;
      T* o = dx->ptr() + base;
      if (cache.mode == Mode::kTrain) {
        // dx = gamma * inv_std / M * (M*dy - sum(dy) - xhat * sum(dy*xhat))
        const T a = static_cast<T>(scale);
        const T mean_dy = static_cast<T>(sum_dy / m);
        const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / m);
        for (std::int64_t j = 0; j < plane; ++j) o[j] = a * (g[j] - mean_dy - xh[j] * mean_dy_xhat);
      } else {
        const T a = static_cast<T>(scale);
        for (std::int64_t j = 0; j < plane; ++j) o[j] = a * g[j];
      }
    }
  }
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  if (x.shape() != dy.shape()) throw Error(ErrorKind::kShape, "relu_backward: shape mismatch");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? dy[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> maxpool(const Tensor<T>& x, int k, int stride, int pad,
                  std::vector<std::int64_t>* argmax) {
  require_rank(x, 4, "maxpool");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (pad >= k) throw Error(ErrorKind::kValue, "maxpool: pad must be smaller than the window");
  const std::int64_t oh = window_out_extent(h, k, stride, pad);
  const std::int64_t ow = window_out_extent(w, k, stride, pad);
  Tensor<T> out({n, c, oh, ow});
  if (argmax) argmax->assign(out.size(), 0);
  std::size_t o = 0;
  for (std::int64_t p = 0; p < n * c; ++p) {
    const std::int64_t base = p * h * w;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox, ++o) {
        T best = -std::numeric_limits<T>::infinity();
        std::int64_t best_idx = -1;
        for (int ky = 0; ky < k; ++ky) {
          const std::int64_t y = oy * stride - pad + ky;
          if (y < 0 || y >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const std::int64_t xx = ox * stride - pad + kx;
            if (xx < 0 || xx >= w) continue;
            const std::int64_t idx = base + y * w + xx;
            if (best_idx < 0 || x[idx] > best) {
              best = x[idx];
              best_idx = idx;
            }
          }
        }
        out[o] = best;
        if (argmax) (*argmax)[o] = best_idx;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> maxpool_backward(const Shape& x_shape, std::span<const std::int64_t> argmax,
                           const Tensor<T>& dy) {
  if (argmax.size() != dy.size()) throw Error(ErrorKind::kShape, "maxpool_backward: size mismatch");
  Tensor<T> dx(x_shape, T(0));
  for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
  return dx;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_rank(x, 4, "global_avg_pool");
  const std::int64_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> out({n, c});
  for (std::int64_t p = 0; p < n * c; ++p) {
    double sum = 0.0;
    const T* src = x.ptr() + p * plane;
    for (std::int64_t j = 0; j < plane; ++j) sum += src[j];
    out[p] = static_cast<T>(sum / static_cast<double>(plane));
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& x_shape, const Tensor<T>& dy) {
  const std::int64_t plane = x_shape[2] * x_shape[3];
  Tensor<T> dx(x_shape);
  const T inv = T(1) / static_cast<T>(plane);
  for (std::size_t p = 0; p < dy.size(); ++p) {
    const T v = dy[p] * inv;
    std::fill(dx.ptr() + p * plane, dx.ptr() + (p + 1) * plane, v);
  }
  return dx;
}

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear weight");
  if (x.dim(1) != weight.dim(0) || bias.shape() != Shape{weight.dim(1)}) {
    throw Error(ErrorKind::kShape, "linear: input " + shape_string(x.shape()) + " vs weight " +
                                       shape_string(weight.shape()) + " / bias " +
                                       shape_string(bias.shape()));
  }
  const int n = static_cast<int>(x.dim(0));
  const int in = static_cast<int>(x.dim(1));
  const int out_f = static_cast<int>(weight.dim(1));
  Tensor<T> out({n, out_f});
  for (int i = 0; i < n; ++i) std::copy(bias.ptr(), bias.ptr() + out_f, out.ptr() + i * out_f);
  detail::gemm(false, false, n, out_f, in, T(1), x.ptr(), in, weight.ptr(), out_f, T(1), out.ptr(),
               out_f);
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p) {
  return linear_forward(x, p.weight, p.bias);
}

template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy,
                     Tensor<T>* dx, Tensor<T>* dweight, Tensor<T>* dbias) {
  const int n = static_cast<int>(x.dim(0));
  const int in = static_cast<int>(x.dim(1));
  const int out_f = static_cast<int>(weight.dim(1));
  if (dx) {
    *dx = Tensor<T>(x.shape());
    detail::gemm(false, true, n, in, out_f, T(1), dy.ptr(), out_f, weight.ptr(), out_f, T(0),
                 dx->ptr(), in);
  }
  if (dweight) {
    *dweight = Tensor<T>(weight.shape());
    detail::gemm(true, false, in, out_f, n, T(1), x.ptr(), in, dy.ptr(), out_f, T(0),
                 dweight->ptr(), out_f);
  }
  if (dbias) {
    *dbias = Tensor<T>({out_f}, T(0));
    for (int j = 0; j < out_f; ++j) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += dy[static_cast<std::size_t>(i) * out_f + j];
      (*dbias)[j] = static_cast<T>(s);
    }
  }
}

namespace {

template <typename T>
void check_labels(const Tensor<T>& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  if (static_cast<std::int64_t>(labels.size()) != logits.dim(0)) {
    throw Error(ErrorKind::kShape, "softmax_cross_entropy: label count does not match batch");
  }
  const int classes = static_cast<int>(logits.dim(1));
  for (int label : labels) {
    if (label < 0 || label >= classes) {
      throw Error(ErrorKind::kValue, "softmax_cross_entropy: label " + std::to_string(label) +
                                         " out of range [0," + std::to_string(classes) + ")");
    }
  }
}

}  // namespace

template <typename T>
T softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const T* row = logits.ptr() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::int64_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    total += std::log(z) + mx - row[labels[i]];
  }
  return static_cast<T>(total / static_cast<double>(n));
}

template <typename T>
Tensor<T> softmax_cross_entropy_backward(const Tensor<T>& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  Tensor<T> grad(logits.shape());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const T* row = logits.ptr() + i * k;
    T* g = grad.ptr() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::int64_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    for (std::int64_t j = 0; j < k; ++j) {
      const double p = std::exp(row[j] - mx) / z;
      g[j] = static_cast<T>((p - (j == labels[i] ? 1.0 : 0.0)) * inv_n);
    }
  }
  return grad;
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  require_rank(logits, 2, "argmax_rows");
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const T* row = logits.ptr() + i * k;
    out[i] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

// ---------------------------------------------------------------------------

double he_std(std::int64_t fan_in) {
  if (fan_in <= 0) throw Error(ErrorKind::kValue, "he_std: fan_in must be positive");
  return std::sqrt(2.0 / static_cast<double>(fan_in));
}

namespace {

template <typename T>
Tensor<T> normal_tensor(const Shape& shape, double stddev, Rng& rng) {
  Tensor<T> t(shape);
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace

template <typename T>
Tensor<T> he_init(const Shape& shape, Rng& rng) {
  if (shape.size() != 4) throw Error(ErrorKind::kShape, "he_init: expected [C_out, C_in, k, k]");
  return normal_tensor<T>(shape, he_std(shape[1] * shape[2] * shape[3]), rng);
}

template <typename T>
Tensor<T> he_init_linear(std::int64_t in_features, std::int64_t out_features, Rng& rng) {
  return normal_tensor<T>({in_features, out_features}, he_std(in_features), rng);
}

template <typename T>
ConvParams<T> make_conv(std::int64_t in_channels, std::int64_t out_channels, int k, int stride,
                        Rng& rng) {
  ConvParams<T> p;
  p.weight = he_init<T>({out_channels, in_channels, k, k}, rng);
  p.stride = stride;
  p.pad = (k - 1) / 2;
  return p;
}

template <typename T>
LinearParams<T> make_linear(std::int64_t in_features, std::int64_t out_features, Rng& rng) {
  LinearParams<T> p;
  p.weight = he_init_linear<T>(in_features, out_features, rng);
  p.bias = Tensor<T>({out_features}, T(0));
  return p;
}

#define RESNET_INSTANTIATE_LAYERS(T)                                                             \
  template struct BNParams<T>;                                                                   \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, int, int);               \
  template void conv2d_backward(const Tensor<T>&, const Tensor<T>&, int, int, const Tensor<T>&,  \
                                Tensor<T>*, Tensor<T>*);                                         \
  template Tensor<T> batchnorm_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                       BNParams<T>&, Mode, BNCache<T>*);                         \
  template void batchnorm_backward(const Tensor<T>&, const Tensor<T>&, const BNCache<T>&,        \
                                   Tensor<T>*, Tensor<T>*, Tensor<T>*);                          \
  template Tensor<T> relu(const Tensor<T>&);                                                     \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> maxpool(const Tensor<T>&, int, int, int, std::vector<std::int64_t>*);       \
  template Tensor<T> maxpool_backward(const Shape&, std::span<const std::int64_t>,               \
                                      const Tensor<T>&);                                         \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                          \
  template Tensor<T> global_avg_pool_backward(const Shape&, const Tensor<T>&);                   \
  template Tensor<T> linear(const Tensor<T>&, const LinearParams<T>&);                           \
  template Tensor<T> linear_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);       \
  template void linear_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                Tensor<T>*, Tensor<T>*, Tensor<T>*);                             \
  template T softmax_cross_entropy(const Tensor<T>&, std::span<const int>);                      \
  template Tensor<T> softmax_cross_entropy_backward(const Tensor<T>&, std::span<const int>);     \
  template std::vector<int> argmax_rows(const Tensor<T>&);                                       \
  template Tensor<T> he_init(const Shape&, Rng&);                                                \
  template Tensor<T> he_init_linear(std::int64_t, std::int64_t, Rng&);                           \
  template ConvParams<T> make_conv(std::int64_t, std::int64_t, int, int, Rng&);                  \
  template LinearParams<T> make_linear(std::int64_t, std::int64_t, Rng&);

RESNET_INSTANTIATE_LAYERS(float)
RESNET_INSTANTIATE_LAYERS(double)

}  // namespace resnet
