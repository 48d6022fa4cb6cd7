// SPDX-License-Identifier: Apache-2.0
// Independent reference implementations used as test oracles.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "mosa/adapter_set.hpp"
#include "mosa/backbone.hpp"
#include "mosa/dataset.hpp"
#include "mosa/masks.hpp"
#include "mosa/ops.hpp"
#include "mosa/tensor.hpp"
#include "mosa/training.hpp"

namespace oracle {

using mosa::Tensor;

struct FdResult {
  double max_rel = 0.0;
  std::size_t checked = 0;
  std::string worst;
  bool ok(double tol = 1e-4) const { return max_rel <= tol; }
};

/// Central differences (f(p+eps) - f(p-eps)) / 2eps for every entry of every
/// param, compared with the tape gradient of f.
inline FdResult check_gradients(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                double eps = 1e-5, double floor = 1e-6) {
  for (auto& p : params) p.zero_grad();
  f().backward();
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    if (!p.has_grad()) {
      analytic.emplace_back(p.numel(), 0.0);
      continue;
    }
    const auto g = p.grad();
    analytic.emplace_back(g.begin(), g.end());
  }
  FdResult r;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double saved = w[j];
      w[j] = saved + eps;
      const double up = f().item();
      w[j] = saved - eps;
      const double down = f().item();
      w[j] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i][j];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++r.checked;
      if (rel > r.max_rel) {
        r.max_rel = rel;
        r.worst = "param " + std::to_string(i) + " entry " + std::to_string(j) + ": " +
                  std::to_string(a) + " vs " + std::to_string(numeric);
      }
    }
  }
  for (auto& p : params) p.zero_grad();
  return r;
}

inline Tensor random_tensor(mosa::Shape shape, mosa::Rng& rng, double sd = 1.0,
                            bool requires_grad = true) {
  std::vector<double> v(mosa::shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, sd);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

/// Textbook dense AdamW (decoupled decay, bias-corrected moments).
struct DenseAdamW {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.0;
  std::size_t t = 0;
  std::vector<std::vector<double>> m, v;

  void step(std::vector<Tensor>& params, double lr) {
    if (m.empty()) {
      for (auto& p : params) {
        m.emplace_back(p.numel(), 0.0);
        v.emplace_back(p.numel(), 0.0);
      }
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto w = params[k].mutable_data();
      const auto g = params[k].grad();
      for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] *= 1.0 - lr * weight_decay;
        m[k][i] = beta1 * m[k][i] + (1.0 - beta1) * g[i];
        v[k][i] = beta2 * v[k][i] + (1.0 - beta2) * g[i] * g[i];
        w[i] -= (lr / bc1) * (m[k][i] / (std::sqrt(v[k][i]) / std::sqrt(bc2) + eps));
      }
    }
  }
};

/// Linear-scaled peak, linear warmup from zero, cosine to zero at the end.
inline double reference_lr(std::size_t step, double base_lr, std::size_t batch,
                           std::size_t warmup_steps, std::size_t total_steps) {
  const double peak = base_lr * static_cast<double>(batch) / 256.0;
  if (step < warmup_steps) {
    return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  if (step >= total_steps) return 0.0;
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return 0.5 * peak * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Dense matrix rebuilt by taking, for every entry, the value from the one
/// expert copy whose mask holds it. Fails (returns empty) on overlap or gaps.
inline std::vector<double> union_of_copies(const std::vector<std::vector<double>>& copies,
                                           const mosa::MaskSet& masks) {
  std::vector<double> out(masks.entries());
  for (std::size_t e = 0; e < out.size(); ++e) {
    int owners = 0;
    for (std::size_t k = 0; k < masks.size(); ++k) {
      if (masks.mask(k)[e]) {
        out[e] = copies[k][e];
        ++owners;
      }
    }
    if (owners != 1) return {};
  }
  return out;
}

/// Snapshot of every trainable value, in parameter order.
inline std::vector<std::vector<double>> snapshot(const std::vector<Tensor>& params) {
  std::vector<std::vector<double>> out;
  for (const auto& p : params) out.emplace_back(p.data().begin(), p.data().end());
  return out;
}

/// Standard single-adapter tuning without any expert machinery: dense
/// adapters, one forward pass, CE loss, dense AdamW on adapters and head.
/// Shuffling and augmentation draw from the same seeded streams the library
/// documents. Calls `on_step` after every update.
inline void reference_adapter_training(
    mosa::FrozenModel& model, mosa::AdapterSet& adapters, const mosa::Dataset& data,
    const mosa::TrainPlan& plan, std::vector<Tensor>& params,
    const std::function<void(std::size_t)>& on_step) {
  const std::size_t n = data.size();
  const std::size_t steps_per_epoch = (n + plan.batch_size - 1) / plan.batch_size;
  mosa::Rng shuffle = mosa::stream_rng(plan.seed, mosa::Stream::kShuffle);
  mosa::Rng augment = mosa::stream_rng(plan.seed, mosa::Stream::kAugment);
  DenseAdamW opt{plan.adam_beta1, plan.adam_beta2, plan.adam_eps, plan.weight_decay};
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle.below(i + 1)]);
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      const std::size_t lo = b * plan.batch_size;
      const std::size_t hi = std::min(n, lo + plan.batch_size);
      const mosa::Batch batch = mosa::make_batch(
          data, std::span<const std::size_t>(order).subspan(lo, hi - lo), &augment, plan.augment);
      for (auto& p : params) p.zero_grad();
      mosa::cross_entropy(mosa::forward(model, batch.images, adapters).logits, batch.labels)
          .backward();
      opt.step(params, reference_lr(step, plan.base_lr, plan.batch_size,
                                    plan.warmup_epochs * steps_per_epoch,
                                    plan.epochs * steps_per_epoch));
      for (auto& p : params) p.zero_grad();
      ++step;
      on_step(step);
    }
  }
}

}  // namespace oracle
