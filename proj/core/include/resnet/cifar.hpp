#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "resnet/layers.hpp"

namespace resnet {

inline constexpr std::int64_t kCifarRecordBytes = 3073;
inline constexpr std::int64_t kCifarPixels = 3 * 32 * 32;

struct Dataset {
  TensorF images;           // [M,C,H,W]
  std::vector<int> labels;  // length M
  TensorF mean;             // [C,H,W] mean subtracted from images, empty if none
  int classes = 10;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
};

/// Decodes concatenated 3073-byte records: label byte, then R, G, B planes
/// (row-major 32x32) scaled by 1/255.
std::pair<TensorF, std::vector<int>> load_cifar_batch(std::span<const std::uint8_t> bytes);

/// Inverse of load_cifar_batch for images in [0,1]; values are rounded to the nearest byte.
std::vector<std::uint8_t> encode_cifar_batch(const TensorF& images, std::span<const int> labels);

struct CifarSplit {
  Dataset train;  // data_batch_1..5
  Dataset test;   // test_batch
};

/// Reads data_batch_{1..5}.bin and test_batch.bin from `dir` (or its
/// cifar-10-batches-bin subdirectory). Throws kIo with a download hint when absent.
CifarSplit load_cifar_dir(const std::filesystem::path& dir);

/// True when every CIFAR-10 binary file is present under `dir`.
bool cifar_available(const std::filesystem::path& dir);

/// Unbiased integer in [0, n) by rejection; stable across standard libraries.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);
/// Fisher-Yates permutation of 0..n-1 using uniform_index.
std::vector<std::int64_t> permutation(std::int64_t n, Rng& rng);

Dataset subset(const Dataset& d, std::span<const std::int64_t> indices);

/// Seeded shuffled partition of exactly 50000 examples into 45000 train and 5000 val.
std::pair<Dataset, Dataset> split_train_val(const Dataset& d, std::uint64_t seed);

/// Zero-pads 4 pixels per side, crops 32x32 at (dy, dx) in [0,8]^2, then mirrors
/// horizontally when `flip`. Works for any HxW with the same 4-pixel pad.
TensorF augment_at(const TensorF& image, int dy, int dx, bool flip);
/// augment_at with offsets uniform in [0,8]^2 and flip probability 0.5.
TensorF augment(const TensorF& image, Rng& rng);

enum class MeanMode { kPerPixel, kPerChannel };

/// Mean image [C,H,W] over images [M,C,H,W], accumulated in double. Per-channel
/// mode broadcasts each channel's scalar mean over the plane.
TensorF compute_mean(const TensorF& images, MeanMode mode = MeanMode::kPerPixel);

/// Subtracts `mean` from every image and records it in d.mean.
void normalize(Dataset& d, const TensorF& mean);

/// Copies the listed examples into a batch [B,C,H,W]; augments each when rng is non-null.
TensorF gather_images(const Dataset& d, std::span<const std::int64_t> indices, Rng* rng);
std::vector<int> gather_labels(const Dataset& d, std::span<const std::int64_t> indices);

/// Class c has a fixed Gaussian prototype image; each example is its
/// prototype plus `noise` times unit Gaussian noise. Labels cycle 0,1,..,classes-1.
Dataset synthetic_dataset(int classes, int per_class, std::uint64_t seed, double noise = 0.5,
                          const Shape& image = {3, 32, 32});

}  // namespace resnet
