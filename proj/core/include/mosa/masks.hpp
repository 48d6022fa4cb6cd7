// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mosa/rng.hpp"

namespace mosa {

using Mask = std::vector<std::uint8_t>;  // one 0/1 byte per entry, row-major

/// N binary masks over a rows x cols weight; see `is_partition()`.
class MaskSet {
 public:
  MaskSet(std::size_t rows, std::size_t cols, std::vector<Mask> masks, std::uint64_t seed = 0);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t entries() const { return rows_ * cols_; }
  std::size_t size() const { return masks_.size(); }
  std::uint64_t seed() const { return seed_; }

  std::span<const std::uint8_t> mask(std::size_t i) const;
  std::size_t ones(std::size_t i) const;

  /// Elementwise OR of the listed masks.
  Mask union_of(std::span<const std::size_t> ids) const;

  /// Disjoint, exhaustive, and sizes within one of each other.
  bool is_partition() const;
  /// Throws InvariantError naming the first violated partition property.
  void validate() const;

  /// Index of the mask owning each entry; requires a valid partition.
  std::vector<std::size_t> owners() const;

  const std::vector<Mask>& masks() const { return masks_; }

  friend bool operator==(const MaskSet&, const MaskSet&) = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<Mask> masks_;
  std::uint64_t seed_;
};

/// Draws a Uniform(0,1) score per entry (row-major) and assigns the entry of
/// rank k (ascending score, ties by position) to mask floor(k * N / entries).
/// The result is the N-quantile split of the scores with exact balance.
MaskSet split_masks(std::size_t rows, std::size_t cols, std::size_t num_masks, Rng& rng);

/// Random pruning mask keeping the round(fraction * entries) lowest-scored
/// entries under the same scoring as `split_masks`.
Mask retain_mask(std::size_t rows, std::size_t cols, double fraction, Rng& rng);

std::size_t count_ones(std::span<const std::uint8_t> mask);

}  // namespace mosa
