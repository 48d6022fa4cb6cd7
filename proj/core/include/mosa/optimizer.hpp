// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mosa/masks.hpp"
#include "mosa/tensor.hpp"

namespace mosa {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct Moments {
  std::vector<double> first;
  std::vector<double> second;
};

struct OptimizerState {
  std::uint64_t step = 0;
  std::map<std::string, Moments> moments;  // keyed by parameter name
};

/// A trainable tensor and the entries this step may touch (nullptr = all).
struct MaskedParam {
  std::string name;
  Tensor tensor;
  const Mask* mask = nullptr;
};

/// AdamW restricted to masked entries. The gradient is masked first; entries
/// outside the mask get no decay, no moment update and no parameter update,
/// so their values and moments stay bit-identical. Active entries follow the
/// dense rule exactly:
///   p <- p * (1 - lr * wd)
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   p <- p - (lr / (1 - b1^t)) * m / (sqrt(v) / sqrt(1 - b2^t) + eps)
/// with t the global step count after increment. Throws InvariantError when a
/// parameter has no gradient.
void masked_step(std::span<MaskedParam> params, OptimizerState& state, double lr,
                 const AdamWConfig& cfg);

}  // namespace mosa
