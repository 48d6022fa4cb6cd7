// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "mosa/tensor.hpp"

namespace mosa {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t entries_checked = 0;
  std::size_t failures = 0;
  std::string worst;  // "param <i> entry <j>: analytic a vs numeric n"
  bool passed = true;
};

/// Compares reverse-mode gradients of the scalar `f` with central differences
/// (f(p + eps) - f(p - eps)) / 2eps, entry by entry, perturbing `params` in
/// place. Relative error is |a - n| / max(|a|, |n|, floor); entries whose
/// gradients are both below `floor` are effectively held to an absolute bound.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                           double eps = 1e-5, double tol = 1e-4, double floor = 1e-6);

}  // namespace mosa
