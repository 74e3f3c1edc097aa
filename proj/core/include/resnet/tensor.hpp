#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "resnet/error.hpp"

namespace resnet {

/// Ordered list of positive extents. Activations are (batch, channel, height, width).
using Shape = std::vector<std::int64_t>;

enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

template <typename T>
inline constexpr DType dtype_of = std::is_same_v<T, float> ? DType::kFloat32 : DType::kFloat64;

std::string_view to_string(DType dtype);

/// Number of elements described by `shape`; throws on an empty list or a non-positive extent.
std::size_t checked_numel(const Shape& shape);

std::string shape_string(const Shape& shape, char sep = 'x');

/// Dense row-major array. float is the training dtype, double is reserved for
/// gradient checking; the two never mix inside one operation.
template <typename T>
class Tensor {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "Tensor supports float and double only");

 public:
  using value_type = T;
  static constexpr DType kDType = dtype_of<T>;

  /// Null tensor: holds no shape. Only useful as a placeholder; every operation rejects it.
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::int64_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return shape_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Row-major offset of a multi-index; bounds-checked.
  std::size_t offset(std::initializer_list<std::int64_t> index) const;
  T& at(std::initializer_list<std::int64_t> index) { return data_[offset(index)]; }
  const T& at(std::initializer_list<std::int64_t> index) const { return data_[offset(index)]; }

  /// Same data under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  void fill(T value);

 private:
  Shape shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Byte-for-byte equality of shape and data.
template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b);

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t);

// ---------------------------------------------------------------------------
// Primitive kernels

template <typename T>
Tensor<T> create(const Shape& shape, T fill);

template <typename T>
Tensor<T> zeros_like(const Tensor<T>& t) {
  return Tensor<T>(t.shape(), T(0));
}

template <typename T>
Tensor<T> ones_like(const Tensor<T>& t) {
  return Tensor<T>(t.shape(), T(1));
}

enum class ZipOp { kAdd, kSub, kMul, kMax };

/// Elementwise a (op) b. `b` either has the shape of `a`, or is a rank-1
/// per-channel vector of length C broadcast over a rank-4 (N,C,H,W) `a`.
template <typename T>
Tensor<T> zip_elementwise(ZipOp op, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

/// [m,k] x [k,n] -> [m,n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a);

enum class ReduceOp { kSum, kMean, kMax };

/// Reduces over the listed axes and drops them. Reducing every axis yields shape [1].
template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& t, std::span<const int> axes);

template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& t, std::initializer_list<int> axes) {
  return reduce(op, t, std::span<const int>(axes.begin(), axes.size()));
}

/// Grows H and W of a rank-4 tensor by 2*pad, filling the border with `value`.
template <typename T>
Tensor<T> pad_spatial(const Tensor<T>& t, int pad, T value);

/// Removes `pad` rows/cols from each spatial side; inverse of pad_spatial.
template <typename T>
Tensor<T> crop_spatial(const Tensor<T>& t, int pad);

/// Output extent of a windowed op: floor((in + 2*pad - k) / stride) + 1.
/// Throws when the padded input is smaller than the window.
std::int64_t window_out_extent(std::int64_t in, int k, int stride, int pad);

/// Unfolds receptive fields: [N,C,H,W] -> [N*Ho*Wo, C*k*k]. Row r = (n, oy, ox);
/// within a row the columns are channel-major, then kernel row, then kernel col.
/// Out-of-bounds taps read as zero.
template <typename T>
Tensor<T> im2col(const Tensor<T>& t, int k, int stride, int pad);

/// Adjoint of im2col: scatters-and-adds columns back into an [N,C,H,W] tensor.
template <typename T>
Tensor<T> col2im(const Tensor<T>& cols, const Shape& image_shape, int k, int stride, int pad);

namespace detail {

// Single-image unfold into a caller-owned [Ho*Wo, C*k*k] buffer.
template <typename T>
void im2col_image(const T* image, std::int64_t channels, std::int64_t height, std::int64_t width,
                  int k, int stride, int pad, T* cols);

// Single-image fold; accumulates into `image`.
template <typename T>
void col2im_image(const T* cols, std::int64_t channels, std::int64_t height, std::int64_t width,
                  int k, int stride, int pad, T* image);

}  // namespace detail

}  // namespace resnet
