#include "resnet/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <limits>
#include <sstream>

#include "gemm.hpp"

namespace resnet {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kValue: return "value";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kConfig: return "config";
  }
  return "unknown";
}

std::string_view to_string(DType dtype) {
  return dtype == DType::kFloat32 ? "float32" : "float64";
}

std::size_t checked_numel(const Shape& shape) {
  if (shape.empty()) {
    throw Error(ErrorKind::kShape, "tensor shape must have at least one dimension");
  }
  std::size_t n = 1;
  for (auto extent : shape) {
    if (extent <= 0) {
      throw Error(ErrorKind::kShape, "tensor extents must be positive, got " + shape_string(shape));
    }
    n *= static_cast<std::size_t>(extent);
  }
  return n;
}

std::string shape_string(const Shape& shape, char sep) {
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << sep;
    os << shape[i];
  }
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  data_.assign(checked_numel(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (checked_numel(shape_) != data_.size()) {
    throw Error(ErrorKind::kShape, "data length " + std::to_string(data_.size()) +
                                       " does not match shape " + shape_string(shape_));
  }
}

template <typename T>
std::int64_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw Error(ErrorKind::kShape, "axis " + std::to_string(axis) + " out of range for rank " +
                                       std::to_string(shape_.size()));
  }
  return shape_[axis];
}

template <typename T>
std::size_t Tensor<T>::offset(std::initializer_list<std::int64_t> index) const {
  if (index.size() != shape_.size()) {
    throw Error(ErrorKind::kShape, "index rank does not match tensor rank");
  }
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i < 0 || i >= shape_[axis]) {
      throw Error(ErrorKind::kShape, "index out of range on axis " + std::to_string(axis));
    }
    off = off * static_cast<std::size_t>(shape_[axis]) + static_cast<std::size_t>(i);
    ++axis;
  }
  return off;
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (checked_numel(shape) != data_.size()) {
    throw Error(ErrorKind::kShape,
                "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor<T>(std::move(shape), data_);
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(T)) == 0;
}

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  std::vector<To> out(t.data().begin(), t.data().end());
  return Tensor<To>(t.shape(), std::move(out));
}

namespace {

template <typename T>
void require_nonnull(const Tensor<T>& t, const char* what) {
  if (t.empty()) throw Error(ErrorKind::kShape, std::string(what) + ": null tensor");
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* what) {
  require_nonnull(t, what);
  if (t.rank() != rank) {
    throw Error(ErrorKind::kShape, std::string(what) + ": expected rank " + std::to_string(rank) +
                                       ", got shape " + shape_string(t.shape()));
  }
}

template <typename T>
T apply(ZipOp op, T a, T b) {
  switch (op) {
    case ZipOp::kAdd: return a + b;
    case ZipOp::kSub: return a - b;
    case ZipOp::kMul: return a * b;
    case ZipOp::kMax: return a > b ? a : b;
  }
  return a;
}

}  // namespace

template <typename T>
Tensor<T> create(const Shape& shape, T fill) {
  return Tensor<T>(shape, fill);
}

template <typename T>
Tensor<T> zip_elementwise(ZipOp op, const Tensor<T>& a, const Tensor<T>& b) {
  require_nonnull(a, "zip_elementwise");
  require_nonnull(b, "zip_elementwise");
  Tensor<T> out(a.shape());
  T* o = out.ptr();
  const T* x = a.ptr();
  const T* y = b.ptr();
  if (a.shape() == b.shape()) {
    const std::size_t n = a.size();
    switch (op) {
      case ZipOp::kAdd:
        for (std::size_t i = 0; i < n; ++i) o[i] = x[i] + y[i];
        break;
      case ZipOp::kSub:
        for (std::size_t i = 0; i < n; ++i) o[i] = x[i] - y[i];
        break;
      case ZipOp::kMul:
        for (std::size_t i = 0; i < n; ++i) o[i] = x[i] * y[i];
        break;
      case ZipOp::kMax:
        for (std::size_t i = 0; i < n; ++i) o[i] = x[i] > y[i] ? x[i] : y[i];
        break;
    }
    return out;
  }
  if (a.rank() == 4 && b.rank() == 1 && b.dim(0) == a.dim(1)) {
    const std::int64_t batch = a.dim(0), channels = a.dim(1);
    const std::int64_t plane = a.dim(2) * a.dim(3);
    for (std::int64_t n = 0; n < batch; ++n) {
      for (std::int64_t c = 0; c < channels; ++c) {
        const std::size_t base = static_cast<std::size_t>((n * channels + c) * plane);
        for (std::int64_t i = 0; i < plane; ++i) o[base + i] = apply(op, x[base + i], y[c]);
      }
    }
    return out;
  }
  throw Error(ErrorKind::kShape, "zip_elementwise: incompatible shapes " + shape_string(a.shape()) +
                                     " and " + shape_string(b.shape()));
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  require_nonnull(a, "scale");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * factor;
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw Error(ErrorKind::kShape, "matmul: inner dimensions differ: " + shape_string(a.shape()) +
                                       " vs " + shape_string(b.shape()));
  }
  const int m = static_cast<int>(a.dim(0));
  const int k = static_cast<int>(a.dim(1));
  const int n = static_cast<int>(b.dim(1));
  Tensor<T> c({m, n});
  detail::gemm(false, false, m, n, k, T(1), a.ptr(), k, b.ptr(), n, T(0), c.ptr(), n);
  return c;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  require_rank(a, 2, "transpose2d");
  const std::int64_t rows = a.dim(0), cols = a.dim(1);
  Tensor<T> out({cols, rows});
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) out[j * rows + i] = a[i * cols + j];
  return out;
}

template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& t, std::span<const int> axes) {
  require_nonnull(t, "reduce");
  const int rank = static_cast<int>(t.rank());
  std::vector<bool> reduced(rank, false);
  for (int axis : axes) {
    if (axis < 0 || axis >= rank) {
      throw Error(ErrorKind::kShape, "reduce: axis " + std::to_string(axis) + " out of range");
    }
    if (reduced[axis]) {
      throw Error(ErrorKind::kShape, "reduce: duplicate axis " + std::to_string(axis));
    }
    reduced[axis] = true;
  }

  Shape out_shape;
  std::int64_t group = 1;
  for (int d = 0; d < rank; ++d) {
    if (reduced[d]) {
      group *= t.shape()[d];
    } else {
      out_shape.push_back(t.shape()[d]);
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);

  // Output stride of every input axis (0 for reduced axes).
  std::vector<std::size_t> out_stride(rank, 0);
  std::size_t s = 1;
  for (int d = rank - 1; d >= 0; --d) {
    if (!reduced[d]) {
      out_stride[d] = s;
      s *= static_cast<std::size_t>(t.shape()[d]);
    }
  }

  const std::size_t out_n = checked_numel(out_shape);
  std::vector<double> acc(out_n, op == ReduceOp::kMax ? -std::numeric_limits<double>::infinity() : 0.0);
  std::vector<std::int64_t> idx(rank, 0);
  std::size_t out_off = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = static_cast<double>(t[i]);
    if (op == ReduceOp::kMax) {
      if (v > acc[out_off]) acc[out_off] = v;
    } else {
      acc[out_off] += v;
    }
    // Advance the multi-index and the matching output offset.
    for (int d = rank - 1; d >= 0; --d) {
      ++idx[d];
      out_off += out_stride[d];
      if (idx[d] < t.shape()[d]) break;
      out_off -= out_stride[d] * static_cast<std::size_t>(idx[d]);
      idx[d] = 0;
    }
  }
  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < out_n; ++i) {
    out[i] = static_cast<T>(op == ReduceOp::kMean ? acc[i] / static_cast<double>(group) : acc[i]);
  }
  return out;
}

template <typename T>
Tensor<T> pad_spatial(const Tensor<T>& t, int pad, T value) {
  require_rank(t, 4, "pad_spatial");
  if (pad < 0) throw Error(ErrorKind::kValue, "pad_spatial: negative pad");
  const std::int64_t n = t.dim(0), c = t.dim(1), h = t.dim(2), w = t.dim(3);
  const std::int64_t ph = h + 2 * pad, pw = w + 2 * pad;
  Tensor<T> out({n, c, ph, pw}, value);
  for (std::int64_t p = 0; p < n * c; ++p) {
    const T* src = t.ptr() + p * h * w;
    T* dst = out.ptr() + p * ph * pw;
    for (std::int64_t y = 0; y < h; ++y) {
      std::copy(src + y * w, src + (y + 1) * w, dst + (y + pad) * pw + pad);
    }
  }
  return out;
}

template <typename T>
Tensor<T> crop_spatial(const Tensor<T>& t, int pad) {
  require_rank(t, 4, "crop_spatial");
  const std::int64_t n = t.dim(0), c = t.dim(1), h = t.dim(2), w = t.dim(3);
  if (pad < 0 || 2 * pad >= h || 2 * pad >= w) {
    throw Error(ErrorKind::kValue, "crop_spatial: crop larger than the image");
  }
  const std::int64_t oh = h - 2 * pad, ow = w - 2 * pad;
  Tensor<T> out({n, c, oh, ow});
  for (std::int64_t p = 0; p < n * c; ++p) {
    const T* src = t.ptr() + p * h * w;
    T* dst = out.ptr() + p * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y) {
      std::copy(src + (y + pad) * w + pad, src + (y + pad) * w + pad + ow, dst + y * ow);
    }
  }
  return out;
}

std::int64_t window_out_extent(std::int64_t in, int k, int stride, int pad) {
  if (k < 1 || stride < 1 || pad < 0) {
    throw Error(ErrorKind::kValue, "window parameters must satisfy k>=1, stride>=1, pad>=0");
  }
  const std::int64_t span = in + 2 * pad - k;
  if (span < 0) {
    throw Error(ErrorKind::kShape, "window " + std::to_string(k) + " larger than padded extent " +
                                       std::to_string(in + 2 * pad));
  }
  return span / stride + 1;
}

namespace detail {

template <typename T>
void im2col_image(const T* image, std::int64_t channels, std::int64_t height, std::int64_t width,
                  int k, int stride, int pad, T* cols) {
  const std::int64_t oh = window_out_extent(height, k, stride, pad);
  const std::int64_t ow = window_out_extent(width, k, stride, pad);
  const std::int64_t row_len = channels * k * k;
  for (std::int64_t oy = 0; oy < oh; ++oy) {
    for (std::int64_t ox = 0; ox < ow; ++ox) {
      T* row = cols + (oy * ow + ox) * row_len;
      const std::int64_t y0 = oy * stride - pad;
      const std::int64_t x0 = ox * stride - pad;
      for (std::int64_t c = 0; c < channels; ++c) {
        const T* plane = image + c * height * width;
        for (int ky = 0; ky < k; ++ky) {
          const std::int64_t y = y0 + ky;
          T* dst = row + (c * k + ky) * k;
          if (y < 0 || y >= height) {
            std::fill(dst, dst + k, T(0));
            continue;
          }
          for (int kx = 0; kx < k; ++kx) {
            const std::int64_t x = x0 + kx;
            dst[kx] = (x < 0 || x >= width) ? T(0) : plane[y * width + x];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_image(const T* cols, std::int64_t channels, std::int64_t height, std::int64_t width,
                  int k, int stride, int pad, T* image) {
  const std::int64_t oh = window_out_extent(height, k, stride, pad);
  const std::int64_t ow = window_out_extent(width, k, stride, pad);
  const std::int64_t row_len = channels * k * k;
  for (std::int64_t oy = 0; oy < oh; ++oy) {
    for (std::int64_t ox = 0; ox < ow; ++ox) {
      const T* row = cols + (oy * ow + ox) * row_len;
      const std::int64_t y0 = oy * stride - pad;
      const std::int64_t x0 = ox * stride - pad;
      for (std::int64_t c = 0; c < channels; ++c) {
        T* plane = image + c * height * width;
        for (int ky = 0; ky < k; ++ky) {
          const std::int64_t y = y0 + ky;
          if (y < 0 || y >= height) continue;
          const T* src = row + (c * k + ky) * k;
          for (int kx = 0; kx < k; ++kx) {
            const std::int64_t x = x0 + kx;
            if (x >= 0 && x < width) plane[y * width + x] += src[kx];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> im2col(const Tensor<T>& t, int k, int stride, int pad) {
  require_rank(t, 4, "im2col");
  const std::int64_t n = t.dim(0), c = t.dim(1), h = t.dim(2), w = t.dim(3);
  const std::int64_t oh = window_out_extent(h, k, stride, pad);
  const std::int64_t ow = window_out_extent(w, k, stride, pad);
  Tensor<T> cols({n * oh * ow, c * k * k});
  for (std::int64_t i = 0; i < n; ++i) {
    detail::im2col_image(t.ptr() + i * c * h * w, c, h, w, k, stride, pad,
                         cols.ptr() + i * oh * ow * c * k * k);
  }
  return cols;
}

template <typename T>
Tensor<T> col2im(const Tensor<T>& cols, const Shape& image_shape, int k, int stride, int pad) {
  require_rank(cols, 2, "col2im");
  if (image_shape.size() != 4) throw Error(ErrorKind::kShape, "col2im: image shape must be rank 4");
  const std::int64_t n = image_shape[0], c = image_shape[1], h = image_shape[2], w = image_shape[3];
  const std::int64_t oh = window_out_extent(h, k, stride, pad);
  const std::int64_t ow = window_out_extent(w, k, stride, pad);
  if (cols.dim(0) != n * oh * ow || cols.dim(1) != c * k * k) {
    throw Error(ErrorKind::kShape, "col2im: column matrix " + shape_string(cols.shape()) +
                                       " does not match image " + shape_string(image_shape));
  }
  Tensor<T> image(image_shape, T(0));
  for (std::int64_t i = 0; i < n; ++i) {
    detail::col2im_image(cols.ptr() + i * oh * ow * c * k * k, c, h, w, k, stride, pad,
                         image.ptr() + i * c * h * w);
  }
  return image;
}

#define RESNET_INSTANTIATE_TENSOR(T)                                                          \
  template class Tensor<T>;                                                                   \
  template bool bitwise_equal(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> create(const Shape&, T);                                                 \
  template Tensor<T> zip_elementwise(ZipOp, const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> scale(const Tensor<T>&, T);                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> transpose2d(const Tensor<T>&);                                           \
  template Tensor<T> reduce(ReduceOp, const Tensor<T>&, std::span<const int>);                \
  template Tensor<T> pad_spatial(const Tensor<T>&, int, T);                                   \
  template Tensor<T> crop_spatial(const Tensor<T>&, int);                                     \
  template Tensor<T> im2col(const Tensor<T>&, int, int, int);                                 \
  template Tensor<T> col2im(const Tensor<T>&, const Shape&, int, int, int);                   \
  template void detail::im2col_image(const T*, std::int64_t, std::int64_t, std::int64_t, int, \
                                     int, int, T*);                                           \
  template void detail::col2im_image(const T*, std::int64_t, std::int64_t, std::int64_t, int, \
                                     int, int, T*);

RESNET_INSTANTIATE_TENSOR(float)
RESNET_INSTANTIATE_TENSOR(double)

template Tensor<double> cast(const Tensor<float>&);
template Tensor<float> cast(const Tensor<double>&);
template Tensor<float> cast(const Tensor<float>&);
template Tensor<double> cast(const Tensor<double>&);

}  // namespace resnet
