// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mosa/rng.hpp"
#include "mosa/tensor.hpp"

namespace mosa {

/// In-memory image classification set; pixels are float32, sample-major,
/// channel-major within a sample.
struct Dataset {
  std::uint16_t channels = 0;
  std::uint16_t height = 0;
  std::uint16_t width = 0;
  std::uint16_t num_classes = 0;
  std::vector<std::uint16_t> labels;
  std::vector<float> pixels;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_numel() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  std::span<const float> image(std::size_t i) const {
    return std::span<const float>(pixels).subspan(i * sample_numel(), sample_numel());
  }
  /// Throws DataError when sizes or labels are inconsistent.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 20;

/// Little-endian layout:
///   "MOSA" | u32 version | u32 num_samples | u16 channels | u16 height |
///   u16 width | u16 num_classes | per sample: u16 label, C*H*W float32
std::vector<unsigned char> encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::span<const unsigned char> bytes);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

struct SyntheticSpec {
  std::size_t classes = 10;
  std::size_t samples_per_class = 200;
  std::size_t val_per_class = 50;
  std::size_t image_size = 16;
  std::size_t channels = 3;
  double difficulty = 1.5;
  std::uint64_t seed = 0;
};

struct DatasetPair {
  Dataset train;
  Dataset val;
};

/// Each class is a fixed procedural pattern (an oriented grating plus a
/// colored blob). Samples add nuisance scaled by `difficulty`: circular
/// shifts up to round(difficulty) pixels, amplitude jitter, a random
/// distractor grating and Gaussian pixel noise. Difficulty 0 reproduces the
/// prototypes exactly. Train and val draw from separate streams.
DatasetPair gen_synthetic(const SyntheticSpec& spec);

struct AugmentConfig {
  bool crop = true;   // random resized crop back to full size
  bool hflip = false;
  double min_scale = 0.6;  // minimum crop area fraction
};

struct Batch {
  Tensor images;  // [B x C x H x W]
  std::vector<std::size_t> labels;
};

/// Widens to float64. With `rng`, applies the seeded augmentation per sample
/// in index order.
Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices, Rng* rng = nullptr,
                 const AugmentConfig& aug = {});

}  // namespace mosa
