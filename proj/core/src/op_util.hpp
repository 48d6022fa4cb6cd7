// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <string>

#include "mosa/errors.hpp"
#include "mosa/tensor.hpp"

namespace mosa::detail {

inline void check_finite(std::span<const double> values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

inline void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
  }
}

// Row length for row-wise ops (last axis).
inline std::size_t row_length(const Tensor& a, const char* op) {
  if (a.rank() == 0 || a.shape().back() == 0) {
    throw DimensionError(std::string(op) + ": empty rows in " + shape_str(a.shape()));
  }
  return a.shape().back();
}

inline Node& input(Node& self, std::size_t i) { return *self.inputs[i]; }

}  // namespace mosa::detail
