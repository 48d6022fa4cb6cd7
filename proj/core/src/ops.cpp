// SPDX-License-Identifier: Apache-2.0
#include "mosa/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <numbers>

#include "mosa/flops.hpp"
#include "op_util.hpp"

namespace mosa {

using detail::check_finite;
using detail::input;
using detail::Node;
using detail::require_matrix;
using detail::require_same_shape;
using detail::row_length;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

thread_local FlopTally* t_tally = nullptr;
thread_local bool t_in_adapter = false;

template <typename Fwd, typename Dfn>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Dfn dfdx) {
  check_finite(x.data(), name);
  std::vector<double> out(x.numel());
  auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xs[i]);
  return Tensor::from_op(x.shape(), std::move(out), {x}, [dfdx](Node& self) {
    auto& in = input(self, 0);
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * dfdx(in.data[i], self.data[i]);
    }
  });
}

}  // namespace

ScopedFlopCount::ScopedFlopCount() : previous_(t_tally) { t_tally = &tally_; }
ScopedFlopCount::~ScopedFlopCount() { t_tally = previous_; }

AdapterBranchScope::AdapterBranchScope() : previous_(t_in_adapter) { t_in_adapter = true; }
AdapterBranchScope::~AdapterBranchScope() { t_in_adapter = previous_; }

void record_matmul_macs(std::uint64_t macs) {
  if (!t_tally) return;
  t_tally->total_macs += macs;
  if (t_in_adapter) t_tally->adapter_macs += macs;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  Map(out.data(), m, n).noalias() = MapC(a.data().data(), m, k) * MapC(b.data().data(), k, n);
  record_matmul_macs(static_cast<std::uint64_t>(m) * k * n);
  return Tensor::from_op({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    auto& an = input(self, 0);
    auto& bn = input(self, 1);
    MapC dc(self.grad.data(), m, n);
    if (an.requires_grad) {
      Map(an.grad_buffer().data(), m, k).noalias() += dc * MapC(bn.data.data(), k, n).transpose();
    }
    if (bn.requires_grad) {
      Map(bn.grad_buffer().data(), k, n).noalias() += MapC(an.data.data(), m, k).transpose() * dc;
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto as = a.data();
  auto bs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] + bs[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t j = 0; j < 2; ++j) {
      auto& in = input(self, j);
      if (!in.requires_grad) continue;
      auto& g = in.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto as = a.data();
  auto bs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] - bs[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    auto& an = input(self, 0);
    auto& bn = input(self, 1);
    if (an.requires_grad) {
      auto& g = an.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bn.requires_grad) {
      auto& g = bn.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto as = a.data();
  auto bs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] * bs[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    auto& an = input(self, 0);
    auto& bn = input(self, 1);
    if (an.requires_grad) {
      auto& g = an.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn.data[i];
    }
    if (bn.requires_grad) {
      auto& g = bn.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an.data[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  auto as = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * as[i];
  return Tensor::from_op(a.shape(), std::move(out), {a}, [s](Node& self) {
    auto& in = input(self, 0);
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = row_length(x, "add_bias");
  if (bias.numel() != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match rows of " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(x.numel());
  auto xs = x.data();
  auto bs = bias.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = xs[r * n + c] + bs[c];
  return Tensor::from_op(x.shape(), std::move(out), {x, bias}, [rows, n](Node& self) {
    auto& xn = input(self, 0);
    auto& bn = input(self, 1);
    if (xn.requires_grad) {
      auto& g = xn.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bn.requires_grad) {
      auto& g = bn.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < n; ++c) g[c] += self.grad[r * n + c];
    }
  });
}

Tensor add_tiled(const Tensor& x, const Tensor& table) {
  require_matrix(x, "add_tiled");
  require_matrix(table, "add_tiled");
  const std::size_t block = table.numel();
  if (table.dim(1) != x.dim(1) || x.numel() % block != 0) {
    throw DimensionError("add_tiled: table " + shape_str(table.shape()) + " does not tile " +
                         shape_str(x.shape()));
  }
  std::vector<double> out(x.numel());
  auto xs = x.data();
  auto ts = table.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[i] + ts[i % block];
  return Tensor::from_op(x.shape(), std::move(out), {x, table}, [block](Node& self) {
    auto& xn = input(self, 0);
    auto& tn = input(self, 1);
    if (xn.requires_grad) {
      auto& g = xn.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (tn.requires_grad) {
      auto& g = tn.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % block] += self.grad[i];
    }
  });
}

Tensor masked(const Tensor& x, std::span<const std::uint8_t> mask) {
  if (mask.size() != x.numel()) {
    throw DimensionError("masked: mask of " + std::to_string(mask.size()) + " entries for " +
                         shape_str(x.shape()));
  }
  std::vector<double> out(x.numel());
  auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask[i] ? xs[i] : 0.0;
  std::vector<std::uint8_t> keep(mask.begin(), mask.end());
  return Tensor::from_op(x.shape(), std::move(out), {x}, [keep = std::move(keep)](Node& self) {
    auto& g = input(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (keep[i]) g[i] += self.grad[i];
    }
  });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        return cdf + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
      });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw NumericError("log: input must be positive");
  }
  return unary(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor softmax(const Tensor& x) {
  check_finite(x.data(), "softmax");
  const std::size_t n = row_length(x, "softmax");
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(x.numel());
  auto xs = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xs.data() + r * n;
    double* o = out.data() + r * n;
    double mx = in[0];
    for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, in[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < n; ++c) o[c] /= z;
  }
  return Tensor::from_op(x.shape(), std::move(out), {x}, [rows, n](Node& self) {
    auto& g = input(self, 0).grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * n;
      const double* dy = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += dy[c] * y[c];
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] += y[c] * (dy[c] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  check_finite(x.data(), "log_softmax");
  const std::size_t n = row_length(x, "log_softmax");
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(x.numel());
  auto xs = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xs.data() + r * n;
    double mx = in[0];
    for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, in[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += std::exp(in[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = in[c] - lse;
  }
  return Tensor::from_op(x.shape(), std::move(out), {x}, [rows, n](Node& self) {
    auto& g = input(self, 0).grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * n;
      const double* dy = self.grad.data() + r * n;
      double total = 0.0;
      for (std::size_t c = 0; c < n; ++c) total += dy[c];
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] += dy[c] - std::exp(y[c]) * total;
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_finite(x.data(), "layer_norm");
  const std::size_t n = row_length(x, "layer_norm");
  const std::size_t rows = x.numel() / n;
  const bool affine = gamma.defined();
  if (affine && (gamma.numel() != n || !beta.defined() || beta.numel() != n)) {
    throw DimensionError("layer_norm: affine parameters do not match rows of " +
                         shape_str(x.shape()));
  }
  std::vector<double> out(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  auto xs = x.data();
  const double* gs = affine ? gamma.data().data() : nullptr;
  const double* bs = affine ? beta.data().data() : nullptr;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xs.data() + r * n;
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += in[c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (in[c] - mu) * is;
      (*xhat)[r * n + c] = h;
      out[r * n + c] = affine ? h * gs[c] + bs[c] : h;
    }
  }
  std::vector<Tensor> inputs{x};
  if (affine) {
    inputs.push_back(gamma);
    inputs.push_back(beta);
  }
  return Tensor::from_op(
      x.shape(), std::move(out), std::move(inputs), [rows, n, affine, xhat, inv_std](Node& self) {
        auto& xn = input(self, 0);
        const double* gam = affine ? input(self, 1).data.data() : nullptr;
        if (affine && input(self, 1).requires_grad) {
          auto& gg = input(self, 1).grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < n; ++c)
              gg[c] += self.grad[r * n + c] * (*xhat)[r * n + c];
        }
        if (affine && input(self, 2).requires_grad) {
          auto& gb = input(self, 2).grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < n; ++c) gb[c] += self.grad[r * n + c];
        }
        if (!xn.requires_grad) return;
        auto& gx = xn.grad_buffer();
        std::vector<double> dh(n);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t c = 0; c < n; ++c) {
            dh[c] = self.grad[r * n + c] * (affine ? gam[c] : 1.0);
            mean_dh += dh[c];
            mean_dh_h += dh[c] * (*xhat)[r * n + c];
          }
          mean_dh /= static_cast<double>(n);
          mean_dh_h /= static_cast<double>(n);
          for (std::size_t c = 0; c < n; ++c) {
            gx[r * n + c] +=
                (*inv_std)[r] * (dh[c] - mean_dh - (*xhat)[r * n + c] * mean_dh_h);
          }
        }
      });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return Tensor::from_op({1}, {total}, {x}, [](Node& self) {
    auto& g = input(self, 0).grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean: empty tensor");
  const double inv = 1.0 / static_cast<double>(x.numel());
  double total = 0.0;
  for (double v : x.data()) total += v;
  return Tensor::from_op({1}, {total * inv}, {x}, [inv](Node& self) {
    auto& g = input(self, 0).grad_buffer();
    for (auto& v : g) v += self.grad[0] * inv;
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::from_op(std::move(shape), std::move(out), {x}, [](Node& self) {
    auto& g = input(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor select_token(const Tensor& x, std::size_t batch, std::size_t tokens, std::size_t index) {
  require_matrix(x, "select_token");
  if (x.dim(0) != batch * tokens || index >= tokens) {
    throw DimensionError("select_token: " + shape_str(x.shape()) + " is not " +
                         std::to_string(batch) + " groups of " + std::to_string(tokens));
  }
  const std::size_t d = x.dim(1);
  std::vector<double> out(batch * d);
  auto xs = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < d; ++c) out[b * d + c] = xs[(b * tokens + index) * d + c];
  return Tensor::from_op({batch, d}, std::move(out), {x}, [batch, tokens, index, d](Node& self) {
    auto& g = input(self, 0).grad_buffer();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < d; ++c) g[(b * tokens + index) * d + c] += self.grad[b * d + c];
  });
}

Tensor mean_tokens(const Tensor& x, std::size_t batch, std::size_t tokens) {
  require_matrix(x, "mean_tokens");
  if (x.dim(0) != batch * tokens || tokens == 0) {
    throw DimensionError("mean_tokens: " + shape_str(x.shape()) + " is not " +
                         std::to_string(batch) + " groups of " + std::to_string(tokens));
  }
  const std::size_t d = x.dim(1);
  const double inv = 1.0 / static_cast<double>(tokens);
  std::vector<double> out(batch * d, 0.0);
  auto xs = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < tokens; ++t)
      for (std::size_t c = 0; c < d; ++c) out[b * d + c] += xs[(b * tokens + t) * d + c];
  for (auto& v : out) v *= inv;
  return Tensor::from_op({batch, d}, std::move(out), {x}, [batch, tokens, d, inv](Node& self) {
    auto& g = input(self, 0).grad_buffer();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < tokens; ++t)
        for (std::size_t c = 0; c < d; ++c)
          g[(b * tokens + t) * d + c] += inv * self.grad[b * d + c];
  });
}

Tensor prepend_token(const Tensor& x, const Tensor& token, std::size_t batch) {
  require_matrix(x, "prepend_token");
  const std::size_t d = x.dim(1);
  if (batch == 0 || x.dim(0) % batch != 0 || token.numel() != d) {
    throw DimensionError("prepend_token: " + shape_str(x.shape()) + " with token " +
                         shape_str(token.shape()));
  }
  const std::size_t p = x.dim(0) / batch;
  const std::size_t t = p + 1;
  std::vector<double> out(batch * t * d);
  auto xs = x.data();
  auto ts = token.data();
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy(ts.begin(), ts.end(), out.begin() + static_cast<std::ptrdiff_t>(b * t * d));
    std::copy(xs.begin() + static_cast<std::ptrdiff_t>(b * p * d),
              xs.begin() + static_cast<std::ptrdiff_t>((b + 1) * p * d),
              out.begin() + static_cast<std::ptrdiff_t>((b * t + 1) * d));
  }
  return Tensor::from_op({batch * t, d}, std::move(out), {x, token}, [batch, p, t, d](Node& self) {
    auto& xn = input(self, 0);
    auto& tn = input(self, 1);
    for (std::size_t b = 0; b < batch; ++b) {
      if (tn.requires_grad) {
        auto& g = tn.grad_buffer();
        for (std::size_t c = 0; c < d; ++c) g[c] += self.grad[b * t * d + c];
      }
      if (xn.requires_grad) {
        auto& g = xn.grad_buffer();
        for (std::size_t i = 0; i < p * d; ++i) g[b * p * d + i] += self.grad[(b * t + 1) * d + i];
      }
    }
  });
}

Tensor patchify(const Tensor& images, std::size_t patch) {
  if (images.rank() != 4) {
    throw DimensionError("patchify: expected [B x C x H x W], got " + shape_str(images.shape()));
  }
  const std::size_t b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw DimensionError("patchify: patch " + std::to_string(patch) + " does not tile " +
                         shape_str(images.shape()));
  }
  const std::size_t gh = h / patch, gw = w / patch;
  const std::size_t cols = c * patch * patch;
  std::vector<double> out(b * gh * gw * cols);
  auto px = images.data();
  std::size_t o = 0;
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t py = 0; py < gh; ++py)
      for (std::size_t pxi = 0; pxi < gw; ++pxi)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t y = 0; y < patch; ++y)
            for (std::size_t x = 0; x < patch; ++x)
              out[o++] = px[((n * c + ch) * h + py * patch + y) * w + pxi * patch + x];
  return Tensor({b * gh * gw, cols}, std::move(out));
}

}  // namespace mosa
