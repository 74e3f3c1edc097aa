#include "resnet/cifar.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace resnet {

std::pair<TensorF, std::vector<int>> load_cifar_batch(std::span<const std::uint8_t> bytes) {
  const auto n = static_cast<std::int64_t>(bytes.size());
  if (n % kCifarRecordBytes != 0) {
    throw Error(ErrorKind::kFormat, "CIFAR batch length " + std::to_string(n) +
                                        " is not a multiple of 3073");
  }
  const std::int64_t m = n / kCifarRecordBytes;
  TensorF images({m, 3, 32, 32});
  std::vector<int> labels(static_cast<std::size_t>(m));
  float* out = images.ptr();
  for (std::int64_t r = 0; r < m; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9) {
      throw Error(ErrorKind::kFormat, "CIFAR record " + std::to_string(r) + " has label " +
                                          std::to_string(rec[0]));
    }
    labels[static_cast<std::size_t>(r)] = rec[0];
    for (std::int64_t i = 0; i < kCifarPixels; ++i) {
      out[r * kCifarPixels + i] = static_cast<float>(rec[1 + i]) / 255.0f;
    }
  }
  return {std::move(images), std::move(labels)};
}

std::vector<std::uint8_t> encode_cifar_batch(const TensorF& images, std::span<const int> labels) {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != 32 || images.dim(3) != 32 ||
      images.dim(0) != static_cast<std::int64_t>(labels.size())) {
    throw Error(ErrorKind::kShape, "encode_cifar_batch: expected [M,3,32,32] with M labels");
  }
  std::vector<std::uint8_t> bytes(labels.size() * kCifarRecordBytes);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || labels[r] > 9) {
      throw Error(ErrorKind::kValue, "encode_cifar_batch: label out of range");
    }
    std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
    rec[0] = static_cast<std::uint8_t>(labels[r]);
    const float* px = images.ptr() + static_cast<std::int64_t>(r) * kCifarPixels;
    for (std::int64_t i = 0; i < kCifarPixels; ++i) {
      rec[1 + i] = static_cast<std::uint8_t>(std::lround(std::clamp(px[i], 0.0f, 1.0f) * 255.0f));
    }
  }
  return bytes;
}

namespace {

const std::array<const char*, 5> kTrainFiles = {"data_batch_1.bin", "data_batch_2.bin",
                                                "data_batch_3.bin", "data_batch_4.bin",
                                                "data_batch_5.bin"};
constexpr const char* kTestFile = "test_batch.bin";

std::filesystem::path resolve_dir(const std::filesystem::path& dir) {
  const auto nested = dir / "cifar-10-batches-bin";
  if (std::filesystem::exists(nested / kTestFile)) return nested;
  return dir;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Dataset concat(std::vector<std::pair<TensorF, std::vector<int>>> parts) {
  std::int64_t m = 0;
  for (const auto& p : parts) m += p.first.dim(0);
  Dataset d;
  d.images = TensorF({m, 3, 32, 32});
  std::int64_t off = 0;
  for (auto& p : parts) {
    std::memcpy(d.images.ptr() + off * kCifarPixels, p.first.ptr(), p.first.size() * sizeof(float));
    off += p.first.dim(0);
    d.labels.insert(d.labels.end(), p.second.begin(), p.second.end());
  }
  return d;
}

}  // namespace

bool cifar_available(const std::filesystem::path& dir) {
  if (dir.empty()) return false;
  const auto root = resolve_dir(dir);
  for (const char* f : kTrainFiles) {
    if (!std::filesystem::exists(root / f)) return false;
  }
  return std::filesystem::exists(root / kTestFile);
}

CifarSplit load_cifar_dir(const std::filesystem::path& dir) {
  if (!cifar_available(dir)) {
    throw Error(ErrorKind::kIo,
                "CIFAR-10 binaries not found under '" + dir.string() +
                    "'; download https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz and "
                    "extract it there (data_batch_1..5.bin, test_batch.bin)");
  }
  const auto root = resolve_dir(dir);
  std::vector<std::pair<TensorF, std::vector<int>>> train;
  for (const char* f : kTrainFiles) {
    const auto bytes = read_file(root / f);
    train.push_back(load_cifar_batch(bytes));
  }
  const auto test_bytes = read_file(root / kTestFile);
  std::vector<std::pair<TensorF, std::vector<int>>> test;
  test.push_back(load_cifar_batch(test_bytes));
  return {concat(std::move(train)), concat(std::move(test))};
}

std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  if (n == 0) throw Error(ErrorKind::kValue, "uniform_index: empty range");
  const std::uint64_t limit = Rng::max() - (Rng::max() % n + 1) % n;
  std::uint64_t v;
  do {
    v = rng();
  } while (v > limit);
  return v % n;
}

std::vector<std::int64_t> permutation(std::int64_t n, Rng& rng) {
  std::vector<std::int64_t> p(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
  for (std::int64_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(i) + 1));
    std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
  }
  return p;
}

Dataset subset(const Dataset& d, std::span<const std::int64_t> indices) {
  Dataset out;
  out.images = gather_images(d, indices, nullptr);
  out.labels = gather_labels(d, indices);
  out.mean = d.mean;
  out.classes = d.classes;
  return out;
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& d, std::uint64_t seed) {
  if (d.size() != 50000) {
    throw Error(ErrorKind::kValue, "split_train_val: expected 50000 examples, got " +
                                       std::to_string(d.size()));
  }
  Rng rng(seed);
  const auto p = permutation(d.size(), rng);
  const std::span<const std::int64_t> all(p);
  return {subset(d, all.first(45000)), subset(d, all.subspan(45000))};
}

TensorF augment_at(const TensorF& image, int dy, int dx, bool flip) {
  constexpr int kPad = 4;
  if (image.rank() != 3) throw Error(ErrorKind::kShape, "augment: expected [C,H,W]");
  if (dy < 0 || dy > 2 * kPad || dx < 0 || dx > 2 * kPad) {
    throw Error(ErrorKind::kValue, "augment: crop offset outside [0,8]");
  }
  const std::int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  TensorF out({c, h, w}, 0.0f);
  const float* src = image.ptr();
  float* dst = out.ptr();
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t y = 0; y < h; ++y) {
      const std::int64_t sy = y + dy - kPad;
      if (sy < 0 || sy >= h) continue;
      for (std::int64_t x = 0; x < w; ++x) {
        // Crop then mirror; equals mirroring first and cropping at 8 - dx.
        const std::int64_t cx = flip ? w - 1 - x : x;
        const std::int64_t sx = cx + dx - kPad;
        if (sx < 0 || sx >= w) continue;
        dst[(ch * h + y) * w + x] = src[(ch * h + sy) * w + sx];
      }
    }
  }
  return out;
}

TensorF augment(const TensorF& image, Rng& rng) {
  const int dy = static_cast<int>(uniform_index(rng, 9));
  const int dx = static_cast<int>(uniform_index(rng, 9));
  const bool flip = uniform_index(rng, 2) == 1;
  return augment_at(image, dy, dx, flip);
}

TensorF compute_mean(const TensorF& images, MeanMode mode) {
  if (images.rank() != 4 || images.dim(0) == 0) {
    throw Error(ErrorKind::kValue, "compute_mean: need a nonempty [M,C,H,W] tensor");
  }
  const std::int64_t m = images.dim(0), c = images.dim(1), plane = images.dim(2) * images.dim(3);
  const std::int64_t per = c * plane;
  std::vector<double> acc(static_cast<std::size_t>(per), 0.0);
  const float* p = images.ptr();
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < per; ++j) acc[static_cast<std::size_t>(j)] += p[i * per + j];
  }
  TensorF mean({c, images.dim(2), images.dim(3)});
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double channel = 0.0;
    for (std::int64_t j = 0; j < plane; ++j) channel += acc[static_cast<std::size_t>(ch * plane + j)];
    for (std::int64_t j = 0; j < plane; ++j) {
      const double v = mode == MeanMode::kPerPixel ? acc[static_cast<std::size_t>(ch * plane + j)] / m
                                                   : channel / static_cast<double>(m * plane);
      mean.ptr()[ch * plane + j] = static_cast<float>(v);
    }
  }
  return mean;
}

void normalize(Dataset& d, const TensorF& mean) {
  const std::int64_t per = static_cast<std::int64_t>(mean.size());
  if (d.images.rank() != 4 || d.images.dim(1) * d.images.dim(2) * d.images.dim(3) != per) {
    throw Error(ErrorKind::kShape, "normalize: mean " + shape_string(mean.shape()) +
                                       " does not match images " + shape_string(d.images.shape()));
  }
  float* p = d.images.ptr();
  const float* mu = mean.ptr();
  for (std::int64_t i = 0; i < d.images.dim(0); ++i) {
    for (std::int64_t j = 0; j < per; ++j) p[i * per + j] -= mu[j];
  }
  d.mean = mean;
}

TensorF gather_images(const Dataset& d, std::span<const std::int64_t> indices, Rng* rng) {
  const Shape& s = d.images.shape();
  const std::int64_t per = s[1] * s[2] * s[3];
  TensorF out({static_cast<std::int64_t>(indices.size()), s[1], s[2], s[3]});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const std::int64_t i = indices[b];
    if (i < 0 || i >= d.size()) throw Error(ErrorKind::kValue, "gather: index out of range");
    const float* src = d.images.ptr() + i * per;
    float* dst = out.ptr() + static_cast<std::int64_t>(b) * per;
    if (rng) {
      TensorF img({s[1], s[2], s[3]}, std::vector<float>(src, src + per));
      const TensorF a = augment(img, *rng);
      std::memcpy(dst, a.ptr(), per * sizeof(float));
    } else {
      std::memcpy(dst, src, per * sizeof(float));
    }
  }
  return out;
}

std::vector<int> gather_labels(const Dataset& d, std::span<const std::int64_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(d.labels.at(static_cast<std::size_t>(i)));
  return out;
}

Dataset synthetic_dataset(int classes, int per_class, std::uint64_t seed, double noise,
                          const Shape& image) {
  if (classes < 2) throw Error(ErrorKind::kValue, "synthetic_dataset: need at least 2 classes");
  if (per_class < 1) throw Error(ErrorKind::kValue, "synthetic_dataset: per_class must be >= 1");
  if (image.size() != 3) throw Error(ErrorKind::kShape, "synthetic_dataset: image must be [C,H,W]");
  const std::int64_t per = checked_numel(image);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> protos(static_cast<std::size_t>(classes * per));
  for (auto& v : protos) v = normal(rng);

  const std::int64_t m = static_cast<std::int64_t>(classes) * per_class;
  Dataset d;
  d.classes = classes;
  d.images = TensorF({m, image[0], image[1], image[2]});
  d.labels.resize(static_cast<std::size_t>(m));
  for (std::int64_t i = 0; i < m; ++i) {
    const int label = static_cast<int>(i % classes);
    d.labels[static_cast<std::size_t>(i)] = label;
    const double* proto = protos.data() + label * per;
    float* dst = d.images.ptr() + i * per;
    for (std::int64_t j = 0; j < per; ++j) {
      dst[j] = static_cast<float>(proto[j] + noise * normal(rng));
    }
  }
  return d;
}

}  // namespace resnet
