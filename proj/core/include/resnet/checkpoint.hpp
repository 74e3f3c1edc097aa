#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "resnet/tensor.hpp"

namespace resnet {

// Layout (all integers little-endian):
//   "RESNETCK"            8-byte magic
//   u32 version           currently 1
//   u64 fingerprint       architecture digest
//   u64 iter
//   u32 n, n bytes        metadata (JSON text)
//   u32 count             tensor table entries, each:
//     u16 n, n bytes      name
//     u8 dtype            0 = f32, 1 = f64
//     u8 rank, rank x u64 extents
//     raw element data
// Trailing bytes after the table are rejected.

inline constexpr std::uint32_t kCheckpointVersion = 1;

using AnyTensor = std::variant<TensorF, TensorD>;

struct Checkpoint {
  std::uint64_t fingerprint = 0;
  std::uint64_t iter = 0;
  std::string meta;
  std::vector<std::pair<std::string, AnyTensor>> tensors;

  const AnyTensor* find(const std::string& name) const;
  /// The named tensor as Tensor<T>; throws kFormat if missing or of another dtype.
  template <typename T>
  const Tensor<T>& get(const std::string& name) const;
};

/// Throws kNumeric if any tensor holds a non-finite value and kValue on duplicate names.
std::vector<std::uint8_t> save_checkpoint(const Checkpoint& ckpt);

/// Throws kFormat on bad magic, version, truncation or trailing data, and
/// kValue when `expected_fingerprint` is given and differs.
Checkpoint load_checkpoint(std::span<const std::uint8_t> bytes,
                           std::optional<std::uint64_t> expected_fingerprint = std::nullopt);

/// Writes to a temporary sibling and renames, so a crash never leaves a partial file.
void write_checkpoint_file(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint_file(const std::filesystem::path& path,
                                std::optional<std::uint64_t> expected_fingerprint = std::nullopt);

}  // namespace resnet
