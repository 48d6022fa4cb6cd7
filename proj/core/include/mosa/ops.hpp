// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mosa/tensor.hpp"

namespace mosa {

// Differentiable whole-tensor operations. Matrices are rank-2 row-major;
// "row" ops treat the last axis as the row. Inputs that must be finite are
// checked and a NumericError names the op otherwise.

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

/// x[m x n] + bias[n], broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
/// x[(B*T) x d] + table[T x d], the table repeated for each of the B groups.
Tensor add_tiled(const Tensor& x, const Tensor& table);
/// x * mask with a constant 0/1 mask; gradient is masked the same way.
Tensor masked(const Tensor& x, std::span<const std::uint8_t> mask);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
/// Row-wise layer norm; `gamma`/`beta` may be undefined for a plain normalize.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-6);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Same values, new shape with equal element count.
Tensor reshape(const Tensor& x, Shape shape);

/// Token-major sequences are stored flat as [(B*T) x d].
Tensor select_token(const Tensor& x, std::size_t batch, std::size_t tokens,
                    std::size_t index);
Tensor mean_tokens(const Tensor& x, std::size_t batch, std::size_t tokens);
/// Inserts `token[1 x d]` ahead of each group of `x[(B*P) x d]`.
Tensor prepend_token(const Tensor& x, const Tensor& token, std::size_t batch);

/// Multi-head scaled dot-product attention over q, k, v of shape [(B*T) x d].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch,
                 std::size_t tokens, std::size_t heads);

/// images[B x C x H x W] -> [(B*P) x (C*p*p)], patches in raster order,
/// each flattened channel-major. Not differentiable (images are inputs).
Tensor patchify(const Tensor& images, std::size_t patch);

// Losses (scalar results).

/// Mean over the batch of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);
/// Mean over rows of sum p * log(p / q) for probability rows; 0 * log(0/q) = 0.
Tensor kl_div(const Tensor& p, const Tensor& q);
/// kl_div(softmax(p_logits), softmax(q_logits)) computed in log space.
Tensor kl_div_logits(const Tensor& p_logits, const Tensor& q_logits);
/// Mean of squared differences over all entries.
Tensor mse(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

}  // namespace mosa
