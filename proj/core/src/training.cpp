// SPDX-License-Identifier: Apache-2.0
#include "mosa/training.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "mosa/errors.hpp"
#include "mosa/inference.hpp"
#include "mosa/ops.hpp"

namespace mosa {

void TrainPlan::validate() const {
  if (epochs > 0 && warmup_epochs >= epochs) {
    throw ConfigError("warmup_epochs (" + std::to_string(warmup_epochs) +
                      ") must be < epochs (" + std::to_string(epochs) + ")");
  }
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("alpha and beta must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(base_lr >= 0.0) || !(weight_decay >= 0.0)) {
    throw ConfigError("base_lr and weight_decay must be >= 0");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) ||
      !(adam_eps > 0.0)) {
    throw ConfigError("adam betas must lie in [0, 1) and eps must be positive");
  }
  if (!(augment.min_scale > 0.0 && augment.min_scale <= 1.0)) {
    throw ConfigError("augment min_scale must lie in (0, 1]");
  }
}

std::vector<std::size_t> alignment_blocks(Alignment a, std::size_t num_layers) {
  const std::size_t half = num_layers / 2;
  std::size_t lo = 0, hi = 0;
  switch (a) {
    case Alignment::kNone: break;
    case Alignment::kShallow: hi = half; break;
    case Alignment::kDeep: lo = half; hi = num_layers; break;
    case Alignment::kAll: hi = num_layers; break;
  }
  std::vector<std::size_t> out(hi - lo);
  std::iota(out.begin(), out.end(), lo);
  return out;
}

std::pair<ExpertChoice, ExpertChoice> sample_experts(Rng& rng, std::size_t num_experts,
                                                     bool hierarchical, bool two_pass_distinct,
                                                     ExpertPairing pairing) {
  if (num_experts <= 1) {
    ExpertChoice zero{hierarchical ? std::nullopt : std::optional<std::size_t>(0), 0};
    return {zero, zero};
  }
  ExpertChoice a, b;
  a.up = rng.below(num_experts);
  if (two_pass_distinct) {
    std::size_t other = rng.below(num_experts - 1);
    if (other >= *a.up) ++other;
    b.up = other;
  } else {
    b.up = rng.below(num_experts);
  }
  if (!hierarchical) {
    if (pairing == ExpertPairing::kTied) {
      a.down = a.up;
      b.down = b.up;
    } else {
      a.down = rng.below(num_experts);
      b.down = rng.below(num_experts);
    }
  }
  return {a, b};
}

ExpertDraw sample_routing(Rng& rng, const AdapterSet& adapters, bool two_pass_distinct) {
  ExpertDraw draw;
  const auto& cfg = adapters.config();
  for (const auto& m : adapters.modules()) {
    const Projection& down = m.adapter ? m.adapter->down() : m.lora->a();
    const Projection& up = m.adapter ? m.adapter->up() : m.lora->b();
    const std::size_t n = std::max(down.num_experts(), up.num_experts());
    const bool hierarchical = !down.experts.has_value();
    auto [a, b] = sample_experts(rng, n, hierarchical, two_pass_distinct, cfg.pairing);
    if (!up.experts) a.up = b.up = std::nullopt;
    if (!down.experts) a.down = b.down = std::nullopt;
    draw.first.push_back(a);
    draw.second.push_back(b);
  }
  return draw;
}

LossTerms objective(ForwardResult first, const ForwardResult* second,
                    std::span<const std::size_t> labels, const TrainPlan& plan) {
  LossTerms terms;
  terms.first = std::move(first);
  Tensor ce = cross_entropy(terms.first.logits, labels);
  terms.ce = ce.item();
  terms.total = ce;
  if (!plan.two_pass()) return terms;
  if (second == nullptr) throw InvariantError("objective: regularized loss needs a second pass");

  Tensor kl12 = kl_div_logits(terms.first.logits, second->logits);
  Tensor kl21 = kl_div_logits(second->logits, terms.first.logits);
  terms.kl_12 = kl12.item();
  terms.kl_21 = kl21.item();
  if (plan.alpha != 0.0) terms.total = add(terms.total, scale(add(kl12, kl21), plan.alpha / 2.0));

  const auto blocks = alignment_blocks(plan.alignment, terms.first.features.size());
  if (!blocks.empty()) {
    Tensor align = mse(terms.first.features[blocks[0]], second->features[blocks[0]]);
    for (std::size_t i = 1; i < blocks.size(); ++i) {
      align = add(align, mse(terms.first.features[blocks[i]], second->features[blocks[i]]));
    }
    terms.align_mse = align.item();
    if (plan.beta != 0.0) terms.total = add(terms.total, scale(align, plan.beta));
  }
  return terms;
}

LossTerms compute_loss(const FrozenModel& model, const AdapterSet& adapters, const Batch& batch,
                       const TrainPlan& plan, const ExpertDraw& draw) {
  if (batch.labels.empty()) throw DataError("compute_loss: empty batch");
  ForwardResult first = forward(model, batch.images, adapters, draw.first);
  if (!plan.two_pass()) return objective(std::move(first), nullptr, batch.labels, plan);
  ForwardResult second = forward(model, batch.images, adapters, draw.second);
  return objective(std::move(first), &second, batch.labels, plan);
}

double lr_at(std::size_t step, const TrainPlan& plan, std::size_t steps_per_epoch) {
  const double peak = plan.base_lr * static_cast<double>(plan.batch_size) / 256.0;
  const std::size_t warmup = plan.warmup_epochs * steps_per_epoch;
  const std::size_t total = plan.epochs * steps_per_epoch;
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (step >= total) return 0.0;
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return 0.5 * peak * (1.0 + std::cos(std::numbers::pi * progress));
}

TrainResult train(FrozenModel& model, AdapterSet& adapters, const Dataset& train_set,
                  const Dataset* val_set, const TrainPlan& plan, const TrainHooks& hooks,
                  OptimizerState state) {
  plan.validate();
  train_set.validate();
  const auto& cfg = model.config();
  if (train_set.size() == 0) throw DataError("train: empty training split");
  if (train_set.channels != cfg.channels || train_set.height != cfg.image_size ||
      train_set.width != cfg.image_size || train_set.num_classes != cfg.num_classes) {
    throw DataError("train: dataset images " + std::to_string(train_set.channels) + "x" +
                    std::to_string(train_set.height) + "x" + std::to_string(train_set.width) +
                    " with " + std::to_string(train_set.num_classes) +
                    " classes do not match the model config");
  }

  const std::size_t n = train_set.size();
  const std::size_t steps_per_epoch = (n + plan.batch_size - 1) / plan.batch_size;
  Rng shuffle_rng = stream_rng(plan.seed, Stream::kShuffle);
  Rng augment_rng = stream_rng(plan.seed, Stream::kAugment);
  Rng expert_rng = stream_rng(plan.seed, Stream::kExperts);
  const AdamWConfig adamw = plan.adamw();

  std::vector<MaskedParam> params;
  const auto adapter_params = adapters.parameters();
  for (const auto& p : adapter_params) params.push_back({p.name, p.tensor, nullptr});
  for (const auto& p : model.trainable()) params.push_back({p.name, p.tensor, nullptr});

  auto validate = hooks.validate;
  if (!validate && val_set) {
    validate = [&] {
      return evaluate(model, adapters, *val_set, InferenceMode{}, plan.batch_size).top1;
    };
  }

  TrainResult result;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= plan.epochs; ++epoch) {
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng.below(i + 1)]);
    StepMetrics sums;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      const std::size_t lo = b * plan.batch_size;
      const std::size_t hi = std::min(n, lo + plan.batch_size);
      const double lr = lr_at(step, plan, steps_per_epoch);
      const ExpertDraw draw = sample_routing(expert_rng, adapters, plan.two_pass_distinct);

      LossTerms terms;
      try {
        const Batch batch = make_batch(
            train_set, std::span<const std::size_t>(order).subspan(lo, hi - lo), &augment_rng,
            plan.augment);
        terms = compute_loss(model, adapters, batch, plan, draw);
      } catch (const DataError& e) {
        throw DataError("batch " + std::to_string(step) + ": " + e.what());
      } catch (const NumericError& e) {
        throw NumericError("batch " + std::to_string(step) + ": " + e.what());
      }
      if (!std::isfinite(terms.total.item())) {
        throw NumericError("batch " + std::to_string(step) + ": loss is not finite");
      }

      for (auto& p : params) p.tensor.zero_grad();
      terms.total.backward();

      const auto masks = adapters.step_masks(draw.first, plan.two_pass() ? &draw.second : nullptr);
      for (std::size_t i = 0; i < adapter_params.size(); ++i) {
        params[i].mask = masks[i] ? &*masks[i] : nullptr;
      }
      masked_step(params, state, lr, adamw);
      for (auto& p : params) {
        p.tensor.zero_grad();
        p.mask = nullptr;
      }
      ++step;

      StepMetrics m;
      m.epoch = epoch;
      m.step = step;
      m.lr = lr;
      m.loss = terms.total.item();
      m.ce = terms.ce;
      m.kl = 0.5 * (terms.kl_12 + terms.kl_21);
      m.align_mse = terms.align_mse;
      result.steps.push_back(m);
      sums.loss += m.loss;
      sums.ce += m.ce;
      sums.kl += m.kl;
      sums.align_mse += m.align_mse;
      if (hooks.on_step) {
        hooks.on_step(StepEvent{step, draw, plan.two_pass(), adapters, model});
      }
    }
    const double inv = 1.0 / static_cast<double>(steps_per_epoch);
    StepMetrics row;
    row.epoch = epoch;
    row.step = step;
    row.lr = result.steps.back().lr;
    row.loss = sums.loss * inv;
    row.ce = sums.ce * inv;
    row.kl = sums.kl * inv;
    row.align_mse = sums.align_mse * inv;
    const bool due = epoch == plan.epochs || (plan.eval_every > 0 && epoch % plan.eval_every == 0);
    if (validate && due) row.val_top1 = validate();
    result.epochs.push_back(row);
  }
  result.optimizer = std::move(state);
  return result;
}

std::string metrics_csv(std::span<const StepMetrics> rows) {
  std::string out = "epoch,step,lr,loss,ce,kl,align_mse,val_top1\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,", r.epoch, r.step, r.lr,
                  r.loss, r.ce, r.kl, r.align_mse);
    out += buf;
    if (r.val_top1) {
      std::snprintf(buf, sizeof buf, "%.17g", *r.val_top1);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

std::string to_string(Alignment a) {
  switch (a) {
    case Alignment::kNone: return "none";
    case Alignment::kShallow: return "shallow";
    case Alignment::kDeep: return "deep";
    case Alignment::kAll: return "all";
  }
  return "?";
}

}  // namespace mosa
