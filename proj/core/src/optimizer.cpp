// SPDX-License-Identifier: Apache-2.0
#include "mosa/optimizer.hpp"

#include <cmath>

#include "mosa/errors.hpp"

namespace mosa {

void masked_step(std::span<MaskedParam> params, OptimizerState& state, double lr,
                 const AdamWConfig& cfg) {
  for (auto& p : params) {
    if (!p.tensor.has_grad()) {
      throw InvariantError("optimizer: trainable parameter '" + p.name + "' has no gradient");
    }
    if (p.mask && p.mask->size() != p.tensor.numel()) {
      throw DimensionError("optimizer: mask size mismatch for '" + p.name + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2_sqrt = std::sqrt(1.0 - std::pow(cfg.beta2, t));
  const double step_size = lr / bc1;
  const double decay = 1.0 - lr * cfg.weight_decay;

  for (auto& p : params) {
    auto& mom = state.moments[p.name];
    const std::size_t n = p.tensor.numel();
    if (mom.first.empty()) {
      mom.first.assign(n, 0.0);
      mom.second.assign(n, 0.0);
    }
    auto w = p.tensor.mutable_data();
    auto g = p.tensor.grad();
    for (std::size_t i = 0; i < n; ++i) {
      if (p.mask && !(*p.mask)[i]) continue;
      const double gi = g[i];
      w[i] *= decay;
      mom.first[i] = cfg.beta1 * mom.first[i] + (1.0 - cfg.beta1) * gi;
      mom.second[i] = cfg.beta2 * mom.second[i] + (1.0 - cfg.beta2) * gi * gi;
      const double denom = std::sqrt(mom.second[i]) / bc2_sqrt + cfg.eps;
      w[i] -= step_size * (mom.first[i] / denom);
    }
  }
}

}  // namespace mosa
