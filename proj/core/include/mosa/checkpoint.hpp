// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mosa/masks.hpp"
#include "mosa/tensor.hpp"

namespace mosa {

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct NamedMask {
  std::string name;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  Mask bits;  // one byte per entry in memory, packed on disk
  friend bool operator==(const NamedMask&, const NamedMask&) = default;
};

struct Checkpoint {
  std::string config;  // canonical key=value text
  std::vector<NamedTensor> tensors;
  std::vector<NamedMask> masks;

  const NamedTensor* find_tensor(const std::string& name) const;
  const NamedMask* find_mask(const std::string& name) const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian layout:
///   "MSCK" | u32 version | u32 config_len | config bytes
///   | u32 tensor_count | per tensor: u32 name_len | name | u32 rank
///       | rank x u32 dims | prod(dims) x f64
///   | u32 mask_count | per mask: u32 name_len | name | u32 rows | u32 cols
///       | ceil(rows*cols/8) bytes, entry e at bit (e % 8) of byte e / 8
///   | u32 CRC-32 (IEEE, zlib) of every preceding byte
std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError (bad magic or trailing bytes), VersionError,
/// LengthError (truncated) or CorruptionError (CRC mismatch).
Checkpoint decode_checkpoint(std::span<const unsigned char> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::uint32_t crc32(std::span<const unsigned char> bytes);

}  // namespace mosa
