// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mosa/adapter_set.hpp"
#include "mosa/backbone.hpp"
#include "mosa/dataset.hpp"
#include "mosa/optimizer.hpp"
#include "mosa/rng.hpp"

namespace mosa {

enum class Alignment { kNone, kShallow, kDeep, kAll };

struct TrainPlan {
  std::size_t epochs = 30;
  std::size_t warmup_epochs = 3;
  std::size_t batch_size = 128;
  double base_lr = 0.01;
  double weight_decay = 0.0;
  double alpha = 1.0;
  double beta = 1.0;
  Alignment alignment = Alignment::kShallow;
  bool two_pass_distinct = true;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  AugmentConfig augment{};
  /// Validation every this many epochs (and always after the last); 0 = last only.
  std::size_t eval_every = 1;

  void validate() const;
  AdamWConfig adamw() const { return {adam_beta1, adam_beta2, adam_eps, weight_decay}; }
  /// Two forward passes are needed only when a regularizer is on.
  bool two_pass() const { return alpha != 0.0 || beta != 0.0; }
};

/// Independent random streams derived from TrainPlan::seed.
enum class Stream : std::uint64_t {
  kAdapterInit = 1,
  kHeadInit = 2,
  kShuffle = 3,
  kAugment = 4,
  kExperts = 5,
  kEval = 6,
};

inline Rng stream_rng(std::uint64_t seed, Stream s) {
  return Rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
}

/// Blocks whose outputs are aligned: shallow = [0, L/2), deep = [L/2, L),
/// all = [0, L), none = {} (L/2 rounded down).
std::vector<std::size_t> alignment_blocks(Alignment a, std::size_t num_layers);

/// Expert indices for one module's two passes. Draw order: up for pass 1,
/// up for pass 2, then (non-hierarchical only) down for pass 1 and pass 2.
/// With `two_pass_distinct` and N >= 2 the pass-2 up index is drawn from the
/// N - 1 remaining experts. N = 1 draws nothing and returns expert 0.
/// `tied` pairing reuses the up index for the down-projection.
std::pair<ExpertChoice, ExpertChoice> sample_experts(Rng& rng, std::size_t num_experts,
                                                     bool hierarchical, bool two_pass_distinct,
                                                     ExpertPairing pairing = ExpertPairing::kIndependent);

struct ExpertDraw {
  Routing first;
  Routing second;
};

/// One sample_experts call per module in module order; indices on projections
/// without an expert split are cleared.
ExpertDraw sample_routing(Rng& rng, const AdapterSet& adapters, bool two_pass_distinct);

struct LossTerms {
  Tensor total;
  double ce = 0.0;
  double kl_12 = 0.0;  // KL(p1 || p2)
  double kl_21 = 0.0;  // KL(p2 || p1)
  double align_mse = 0.0;  // sum over aligned blocks
  ForwardResult first;
};

/// The objective on already computed passes. `second` may be null only when
/// plan.two_pass() is false. Alignment uses the blocks of `first.features`.
LossTerms objective(ForwardResult first, const ForwardResult* second,
                    std::span<const std::size_t> labels, const TrainPlan& plan);

/// CE(p1, y) + alpha/2 (KL(p1||p2) + KL(p2||p1)) + beta * sum_{i in A} MSE(f1^i, f2^i),
/// with both passes on the same images. When alpha = beta = 0 only pass 1 runs.
LossTerms compute_loss(const FrozenModel& model, const AdapterSet& adapters, const Batch& batch,
                       const TrainPlan& plan, const ExpertDraw& draw);

/// Linear warmup from 0 to base_lr * batch_size / 256 over the warmup epochs,
/// then cosine decay reaching 0 at step epochs * steps_per_epoch.
double lr_at(std::size_t step, const TrainPlan& plan, std::size_t steps_per_epoch);

struct StepMetrics {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // 1-based global step
  double lr = 0.0;
  double loss = 0.0;
  double ce = 0.0;
  double kl = 0.0;  // (KL12 + KL21) / 2
  double align_mse = 0.0;
  std::optional<double> val_top1;
};

struct StepEvent {
  std::size_t step = 0;  // 1-based
  const ExpertDraw& draw;
  bool used_second_pass;
  const AdapterSet& adapters;
  const FrozenModel& model;
};

struct TrainHooks {
  /// Called after each optimizer step.
  std::function<void(const StepEvent&)> on_step;
  /// Validation accuracy of the current weights; defaults to merged-mode top-1.
  std::function<double()> validate;
};

struct TrainResult {
  std::vector<StepMetrics> epochs;
  std::vector<StepMetrics> steps;
  OptimizerState optimizer;
};

/// Stochastic-activation training. Per batch: sample experts, run the
/// passes, back-propagate the combined loss once, and take a masked AdamW
/// step where each split weight may change only inside the union of the
/// experts used by the two passes. Trainable tensors are the adapter
/// parameters plus every trainable model tensor (head, tuned biases).
TrainResult train(FrozenModel& model, AdapterSet& adapters, const Dataset& train_set,
                  const Dataset* val_set, const TrainPlan& plan, const TrainHooks& hooks = {},
                  OptimizerState state = {});

/// Header `epoch,step,lr,loss,ce,kl,align_mse,val_top1` and one line per row;
/// doubles are printed with 17 significant digits, missing val_top1 is empty.
std::string metrics_csv(std::span<const StepMetrics> rows);

std::string to_string(Alignment a);

}  // namespace mosa
