// SPDX-License-Identifier: Apache-2.0
#include <Eigen/Core>
#include <cmath>

#include "mosa/flops.hpp"
#include "mosa/ops.hpp"
#include "op_util.hpp"

namespace mosa {

using detail::input;
using detail::Node;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Stride = Eigen::OuterStride<>;
using HeadC = Eigen::Map<const RowMat, 0, Stride>;
using Head = Eigen::Map<RowMat, 0, Stride>;
using SquareC = Eigen::Map<const RowMat>;
using Square = Eigen::Map<RowMat>;

}  // namespace

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch,
                 std::size_t tokens, std::size_t heads) {
  detail::require_matrix(q, "attention");
  detail::require_same_shape(q, k, "attention");
  detail::require_same_shape(q, v, "attention");
  const std::size_t d = q.dim(1);
  if (q.dim(0) != batch * tokens || heads == 0 || d % heads != 0) {
    throw DimensionError("attention: " + shape_str(q.shape()) + " is not " +
                         std::to_string(batch) + "x" + std::to_string(tokens) + " tokens over " +
                         std::to_string(heads) + " heads");
  }
  const auto dh = static_cast<Eigen::Index>(d / heads);
  const auto T = static_cast<Eigen::Index>(tokens);
  const Stride stride(static_cast<Eigen::Index>(d));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  auto probs = std::make_shared<std::vector<double>>(batch * heads * tokens * tokens);
  std::vector<double> out(batch * tokens * d);
  const double* qs = q.data().data();
  const double* ks = k.data().data();
  const double* vs = v.data().data();

  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = b * tokens * d + h * static_cast<std::size_t>(dh);
      Square P(probs->data() + (b * heads + h) * tokens * tokens, T, T);
      P.noalias() = HeadC(qs + off, T, dh, stride) * HeadC(ks + off, T, dh, stride).transpose();
      for (Eigen::Index i = 0; i < T; ++i) {
        auto row = P.row(i);
        row *= inv_sqrt;
        const double mx = row.maxCoeff();
        row = (row.array() - mx).exp();
        row /= row.sum();
      }
      Head(out.data() + off, T, dh, stride).noalias() = P * HeadC(vs + off, T, dh, stride);
    }
  }
  record_matmul_macs(2 * static_cast<std::uint64_t>(batch) * heads * tokens * tokens *
                     static_cast<std::uint64_t>(dh));

  return Tensor::from_op(
      q.shape(), std::move(out), {q, k, v},
      [batch, heads, tokens, d, dh, T, inv_sqrt, probs](Node& self) {
        auto& qn = input(self, 0);
        auto& kn = input(self, 1);
        auto& vn = input(self, 2);
        double* gq = qn.requires_grad ? qn.grad_buffer().data() : nullptr;
        double* gk = kn.requires_grad ? kn.grad_buffer().data() : nullptr;
        double* gv = vn.requires_grad ? vn.grad_buffer().data() : nullptr;
        const Stride stride(static_cast<Eigen::Index>(d));
        RowMat dP(T, T);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = b * tokens * d + h * static_cast<std::size_t>(dh);
            SquareC P(probs->data() + (b * heads + h) * tokens * tokens, T, T);
            HeadC dO(self.grad.data() + off, T, dh, stride);
            dP.noalias() = dO * HeadC(vn.data.data() + off, T, dh, stride).transpose();
            if (gv) Head(gv + off, T, dh, stride).noalias() += P.transpose() * dO;
            for (Eigen::Index i = 0; i < T; ++i) {
              const double dot = dP.row(i).dot(P.row(i));
              dP.row(i) = (P.row(i).array() * (dP.row(i).array() - dot) * inv_sqrt).matrix();
            }
            if (gq) {
              Head(gq + off, T, dh, stride).noalias() +=
                  dP * HeadC(kn.data.data() + off, T, dh, stride);
            }
            if (gk) {
              Head(gk + off, T, dh, stride).noalias() +=
                  dP.transpose() * HeadC(qn.data.data() + off, T, dh, stride);
            }
          }
        }
      });
}

}  // namespace mosa
