// SPDX-License-Identifier: Apache-2.0
#include "mosa/inference.hpp"

#include <cstdio>
#include <fstream>

#include "mosa/errors.hpp"
#include "mosa/flops.hpp"
#include "mosa/ops.hpp"
#include "mosa/training.hpp"

namespace mosa {

std::string to_string(InferenceVariant v) {
  switch (v) {
    case InferenceVariant::kFixed: return "fixed";
    case InferenceVariant::kStochastic: return "stochastic";
    case InferenceVariant::kEnsemble: return "ensemble";
    case InferenceVariant::kMerge: return "merge";
  }
  return "?";
}

InferenceVariant parse_variant(const std::string& name) {
  for (auto v : {InferenceVariant::kFixed, InferenceVariant::kStochastic,
                 InferenceVariant::kEnsemble, InferenceVariant::kMerge}) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError("unknown inference mode '" + name +
                    "' (expected fixed, stochastic, ensemble or merge)");
}

AdapterSet merge_experts(const AdapterSet& adapters) { return adapters.merged_copy(); }

Tensor jigsaw_merge(std::span<const Tensor> copies, const MaskSet& masks) {
  masks.validate();
  if (copies.size() != masks.size()) {
    throw InvariantError("jigsaw_merge: " + std::to_string(copies.size()) + " copies for " +
                         std::to_string(masks.size()) + " masks");
  }
  const Shape shape{masks.rows(), masks.cols()};
  for (const auto& c : copies) {
    if (c.shape() != shape) {
      throw DimensionError("jigsaw_merge: copy " + shape_str(c.shape()) + " vs masks " +
                           shape_str(shape));
    }
  }
  const auto owners = masks.owners();
  std::vector<double> out(masks.entries());
  for (std::size_t e = 0; e < out.size(); ++e) out[e] = copies[owners[e]].data()[e];
  return Tensor(shape, std::move(out));
}

namespace {

Routing random_routing(const AdapterSet& adapters, Rng& rng) {
  Routing r;
  for (const auto& m : adapters.modules()) {
    const Projection& down = m.adapter ? m.adapter->down() : m.lora->a();
    const Projection& up = m.adapter ? m.adapter->up() : m.lora->b();
    ExpertChoice c;
    if (up.experts) c.up = rng.below(up.num_experts());
    if (down.experts) c.down = rng.below(down.num_experts());
    r.push_back(c);
  }
  return r;
}

Routing routing_for(const AdapterSet& adapters, const InferenceMode& mode, Rng* rng) {
  switch (mode.variant) {
    case InferenceVariant::kFixed:
      if (mode.fixed_index >= adapters.num_experts()) {
        throw IndexError("fixed expert index " + std::to_string(mode.fixed_index) +
                         " out of range for " + std::to_string(adapters.num_experts()) +
                         " experts");
      }
      return adapters.uniform_routing(mode.fixed_index);
    case InferenceVariant::kStochastic:
      if (rng == nullptr) throw InvariantError("stochastic inference needs an rng");
      return random_routing(adapters, *rng);
    default:
      return {};
  }
}

ForwardResult run(const FrozenModel& model, const AdapterSet& adapters, const Tensor& images,
                  const InferenceMode& mode, Rng* rng) {
  if (mode.variant == InferenceVariant::kMerge) {
    if (adapters.merged()) return forward(model, images, adapters);
    return forward(model, images, merge_experts(adapters));
  }
  if (mode.variant != InferenceVariant::kEnsemble) {
    return forward(model, images, adapters, routing_for(adapters, mode, rng));
  }
  const std::size_t n = adapters.num_experts();
  ForwardResult acc = forward(model, images, adapters, adapters.uniform_routing(0));
  for (std::size_t k = 1; k < n; ++k) {
    ForwardResult r = forward(model, images, adapters, adapters.uniform_routing(k));
    acc.logits = add(acc.logits, r.logits);
    acc.pooled = add(acc.pooled, r.pooled);
  }
  if (n > 1) {
    acc.logits = scale(acc.logits, 1.0 / static_cast<double>(n));
    acc.pooled = scale(acc.pooled, 1.0 / static_cast<double>(n));
  }
  return acc;
}

}  // namespace

Tensor infer(const FrozenModel& model, const AdapterSet& adapters, const Tensor& images,
             const InferenceMode& mode, Rng* rng) {
  return run(model, adapters, images, mode, rng).logits;
}

std::string EvalReport::csv_row() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%.17g,%zu,%llu,%llu", to_string(mode.variant).c_str(), top1,
                params_excl_head, static_cast<unsigned long long>(flops_adapter),
                static_cast<unsigned long long>(mode.seed));
  return buf;
}

EvalReport evaluate(const FrozenModel& model, const AdapterSet& adapters, const Dataset& split,
                    const InferenceMode& mode, std::size_t batch_size,
                    const std::optional<std::filesystem::path>& feature_dump) {
  split.validate();
  if (split.size() == 0) throw DataError("evaluate: empty split");
  if (batch_size == 0) throw ConfigError("evaluate: batch_size must be >= 1");
  if (mode.variant == InferenceVariant::kFixed) routing_for(adapters, mode, nullptr);

  const AdapterSet merged = mode.variant == InferenceVariant::kMerge && !adapters.merged()
                                ? merge_experts(adapters)
                                : AdapterSet{};
  const AdapterSet& active = mode.variant == InferenceVariant::kMerge && !adapters.merged()
                                 ? merged
                                 : adapters;

  std::ofstream dump;
  if (feature_dump) {
    dump.open(*feature_dump);
    if (!dump) throw DataError("cannot write feature dump " + feature_dump->string());
  }

  Rng rng = stream_rng(mode.seed, Stream::kEval);
  std::size_t correct = 0;
  FlopTally flops;
  const std::size_t n = split.size();
  std::vector<std::size_t> idx;
  for (std::size_t lo = 0; lo < n; lo += batch_size) {
    const std::size_t hi = std::min(n, lo + batch_size);
    idx.resize(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) idx[i - lo] = i;
    const Batch batch = make_batch(split, idx);
    ForwardResult out;
    {
      ScopedFlopCount count;
      out = run(model, active, batch.images, mode, &rng);
      flops.adapter_macs += count.tally().adapter_macs;
      flops.total_macs += count.tally().total_macs;
    }
    const std::size_t classes = out.logits.dim(1);
    const auto logits = out.logits.data();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c) {
        if (logits[b * classes + c] > logits[b * classes + best]) best = c;
      }
      if (best == batch.labels[b]) ++correct;
    }
    if (dump) {
      const std::size_t d = out.pooled.dim(1);
      char buf[64];
      for (std::size_t b = 0; b < idx.size(); ++b) {
        dump << batch.labels[b];
        for (std::size_t j = 0; j < d; ++j) {
          std::snprintf(buf, sizeof buf, ",%.17g", out.pooled.data()[b * d + j]);
          dump << buf;
        }
        dump << '\n';
      }
    }
  }
  if (dump && !dump.flush()) throw DataError("failed writing feature dump");

  EvalReport report;
  report.mode = mode;
  report.num_samples = n;
  report.top1 = static_cast<double>(correct) / static_cast<double>(n);
  report.params_excl_head = count_trainable_params(model, adapters);
  report.flops_adapter = flops.adapter_macs / n;
  return report;
}

std::size_t count_trainable_params(const FrozenModel& model, const AdapterSet& adapters) {
  std::size_t n = adapters.trainable_parameter_count();
  for (const auto& p : model.trainable()) {
    if (!FrozenModel::is_head(p.name)) n += p.tensor.numel();
  }
  return n;
}

std::size_t backbone_bias_count(const BackboneConfig& cfg) {
  const std::size_t d = cfg.embed_dim;
  return d + cfg.num_layers * (7 * d + cfg.hidden_dim()) + d;
}

}  // namespace mosa
