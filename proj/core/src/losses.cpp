// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "mosa/ops.hpp"
#include "op_util.hpp"

namespace mosa {

using detail::check_finite;
using detail::input;
using detail::Node;

namespace {

// Row-wise log-softmax into `out`; returns nothing, rows of length n.
void log_softmax_rows(const double* x, double* out, std::size_t rows, std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x + r * n;
    double mx = in[0];
    for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, in[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += std::exp(in[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = in[c] - lse;
  }
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  detail::require_matrix(logits, "cross_entropy");
  check_finite(logits.data(), "cross_entropy");
  const std::size_t rows = logits.dim(0), n = logits.dim(1);
  if (labels.size() != rows || rows == 0) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         shape_str(logits.shape()));
  }
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] >= n) {
      throw IndexError("cross_entropy: label " + std::to_string(labels[r]) + " out of range for " +
                       std::to_string(n) + " classes");
    }
  }
  auto logp = std::make_shared<std::vector<double>>(logits.numel());
  log_softmax_rows(logits.data().data(), logp->data(), rows, n);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) total -= (*logp)[r * n + labels[r]];
  const double inv = 1.0 / static_cast<double>(rows);
  std::vector<std::size_t> y(labels.begin(), labels.end());
  return Tensor::from_op({1}, {total * inv}, {logits},
                         [logp, y = std::move(y), rows, n, inv](Node& self) {
                           auto& g = input(self, 0).grad_buffer();
                           const double s = self.grad[0] * inv;
                           for (std::size_t r = 0; r < rows; ++r) {
                             for (std::size_t c = 0; c < n; ++c) {
                               const double p = std::exp((*logp)[r * n + c]);
                               g[r * n + c] += s * (p - (c == y[r] ? 1.0 : 0.0));
                             }
                           }
                         });
}

Tensor kl_div(const Tensor& p, const Tensor& q) {
  detail::require_same_shape(p, q, "kl_div");
  check_finite(p.data(), "kl_div");
  check_finite(q.data(), "kl_div");
  const std::size_t n = detail::row_length(p, "kl_div");
  const std::size_t rows = p.numel() / n;
  auto ps = p.data();
  auto qs = q.data();
  double total = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i] < 0.0 || qs[i] < 0.0) throw NumericError("kl_div: negative probability");
    if (ps[i] == 0.0) continue;
    if (qs[i] == 0.0) throw NumericError("kl_div: q is zero where p is positive");
    total += ps[i] * std::log(ps[i] / qs[i]);
  }
  const double inv = 1.0 / static_cast<double>(rows);
  return Tensor::from_op({1}, {total * inv}, {p, q}, [inv](Node& self) {
    auto& pn = input(self, 0);
    auto& qn = input(self, 1);
    const double s = self.grad[0] * inv;
    if (pn.requires_grad) {
      auto& g = pn.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (pn.data[i] > 0.0) g[i] += s * (std::log(pn.data[i] / qn.data[i]) + 1.0);
      }
    }
    if (qn.requires_grad) {
      auto& g = qn.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (pn.data[i] > 0.0) g[i] -= s * pn.data[i] / qn.data[i];
      }
    }
  });
}

Tensor kl_div_logits(const Tensor& p_logits, const Tensor& q_logits) {
  detail::require_matrix(p_logits, "kl_div_logits");
  detail::require_same_shape(p_logits, q_logits, "kl_div_logits");
  check_finite(p_logits.data(), "kl_div_logits");
  check_finite(q_logits.data(), "kl_div_logits");
  const std::size_t rows = p_logits.dim(0), n = p_logits.dim(1);
  auto lp = std::make_shared<std::vector<double>>(p_logits.numel());
  auto lq = std::make_shared<std::vector<double>>(q_logits.numel());
  log_softmax_rows(p_logits.data().data(), lp->data(), rows, n);
  log_softmax_rows(q_logits.data().data(), lq->data(), rows, n);
  double total = 0.0;
  for (std::size_t i = 0; i < lp->size(); ++i) {
    total += std::exp((*lp)[i]) * ((*lp)[i] - (*lq)[i]);
  }
  const double inv = 1.0 / static_cast<double>(rows);
  return Tensor::from_op(
      {1}, {total * inv}, {p_logits, q_logits}, [lp, lq, rows, n, inv](Node& self) {
        auto& pn = input(self, 0);
        auto& qn = input(self, 1);
        const double s = self.grad[0] * inv;
        for (std::size_t r = 0; r < rows; ++r) {
          const double* a = lp->data() + r * n;
          const double* b = lq->data() + r * n;
          if (pn.requires_grad) {
            // d/da_c of sum p (log p - log q) = p_c * ((log p_c - log q_c) - KL_row)
            double kl = 0.0;
            for (std::size_t c = 0; c < n; ++c) kl += std::exp(a[c]) * (a[c] - b[c]);
            auto& g = pn.grad_buffer();
            for (std::size_t c = 0; c < n; ++c) {
              g[r * n + c] += s * std::exp(a[c]) * ((a[c] - b[c]) - kl);
            }
          }
          if (qn.requires_grad) {
            auto& g = qn.grad_buffer();
            for (std::size_t c = 0; c < n; ++c) {
              g[r * n + c] += s * (std::exp(b[c]) - std::exp(a[c]));
            }
          }
        }
      });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mse");
  if (a.numel() == 0) throw DimensionError("mse: empty tensors");
  const double inv = 1.0 / static_cast<double>(a.numel());
  double total = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double diff = a[i] - b[i];
    total += diff * diff;
  }
  return Tensor::from_op({1}, {total * inv}, {a, b}, [inv](Node& self) {
    auto& an = input(self, 0);
    auto& bn = input(self, 1);
    const double s = 2.0 * self.grad[0] * inv;
    if (an.requires_grad) {
      auto& g = an.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * (an.data[i] - bn.data[i]);
    }
    if (bn.requires_grad) {
      auto& g = bn.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= s * (an.data[i] - bn.data[i]);
    }
  });
}

}  // namespace mosa
