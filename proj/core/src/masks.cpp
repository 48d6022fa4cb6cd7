// SPDX-License-Identifier: Apache-2.0
#include "mosa/masks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mosa/errors.hpp"

namespace mosa {

namespace {

// Entry indices sorted by ascending Uniform(0,1) score.
std::vector<std::size_t> score_ranking(std::size_t n, Rng& rng) {
  std::vector<double> scores(n);
  for (auto& s : scores) s = rng.uniform();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  return order;
}

}  // namespace

std::size_t count_ones(std::span<const std::uint8_t> mask) {
  return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(),
                                                [](std::uint8_t v) { return v != 0; }));
}

MaskSet::MaskSet(std::size_t rows, std::size_t cols, std::vector<Mask> masks, std::uint64_t seed)
    : rows_(rows), cols_(cols), masks_(std::move(masks)), seed_(seed) {
  for (const auto& m : masks_) {
    if (m.size() != rows_ * cols_) {
      throw DimensionError("MaskSet: mask of " + std::to_string(m.size()) + " entries for " +
                           std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }
}

std::span<const std::uint8_t> MaskSet::mask(std::size_t i) const {
  if (i >= masks_.size()) {
    throw IndexError("expert index " + std::to_string(i) + " out of range for " +
                     std::to_string(masks_.size()) + " experts");
  }
  return masks_[i];
}

std::size_t MaskSet::ones(std::size_t i) const { return count_ones(mask(i)); }

Mask MaskSet::union_of(std::span<const std::size_t> ids) const {
  Mask out(entries(), 0);
  for (auto id : ids) {
    auto m = mask(id);
    for (std::size_t e = 0; e < out.size(); ++e) out[e] |= m[e];
  }
  return out;
}

bool MaskSet::is_partition() const {
  try {
    validate();
    return true;
  } catch (const InvariantError&) {
    return false;
  }
}

void MaskSet::validate() const {
  if (masks_.empty()) throw InvariantError("MaskSet: no masks");
  for (std::size_t e = 0; e < entries(); ++e) {
    int covered = 0;
    for (const auto& m : masks_) covered += m[e] != 0;
    if (covered == 0) {
      throw InvariantError("MaskSet: entry " + std::to_string(e) + " belongs to no mask");
    }
    if (covered > 1) {
      throw InvariantError("MaskSet: entry " + std::to_string(e) + " belongs to " +
                           std::to_string(covered) + " masks");
    }
  }
  std::size_t lo = entries(), hi = 0;
  for (std::size_t i = 0; i < masks_.size(); ++i) {
    const auto n = ones(i);
    lo = std::min(lo, n);
    hi = std::max(hi, n);
  }
  if (hi - lo > 1) {
    throw InvariantError("MaskSet: unbalanced sizes " + std::to_string(lo) + ".." +
                         std::to_string(hi));
  }
}

std::vector<std::size_t> MaskSet::owners() const {
  validate();
  std::vector<std::size_t> owner(entries());
  for (std::size_t i = 0; i < masks_.size(); ++i)
    for (std::size_t e = 0; e < entries(); ++e)
      if (masks_[i][e]) owner[e] = i;
  return owner;
}

MaskSet split_masks(std::size_t rows, std::size_t cols, std::size_t num_masks, Rng& rng) {
  const std::size_t n = rows * cols;
  if (num_masks < 1 || num_masks > n) {
    throw ConfigError("split_masks: cannot split " + std::to_string(n) + " entries into " +
                      std::to_string(num_masks) + " experts");
  }
  const auto seed = rng.seed();
  const auto order = score_ranking(n, rng);
  std::vector<Mask> masks(num_masks, Mask(n, 0));
  for (std::size_t rank = 0; rank < n; ++rank) {
    // rank * N < entries * N fits easily in 64 bits for any realistic weight.
    masks[rank * num_masks / n][order[rank]] = 1;
  }
  return MaskSet(rows, cols, std::move(masks), seed);
}

Mask retain_mask(std::size_t rows, std::size_t cols, double fraction, Rng& rng) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("retain_fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  const std::size_t n = rows * cols;
  const auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  const auto order = score_ranking(n, rng);
  Mask m(n, 0);
  for (std::size_t rank = 0; rank < keep; ++rank) m[order[rank]] = 1;
  return m;
}

}  // namespace mosa
