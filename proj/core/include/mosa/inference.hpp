// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>

#include "mosa/adapter_set.hpp"
#include "mosa/backbone.hpp"
#include "mosa/dataset.hpp"
#include "mosa/rng.hpp"

namespace mosa {

enum class InferenceVariant { kFixed, kStochastic, kEnsemble, kMerge };

struct InferenceMode {
  InferenceVariant variant = InferenceVariant::kMerge;
  std::size_t fixed_index = 0;
  std::uint64_t seed = 0;
};

std::string to_string(InferenceVariant v);
/// Accepts fixed, stochastic, ensemble and merge; ConfigError otherwise.
InferenceVariant parse_variant(const std::string& name);

/// Checks every expert split is a partition, then drops it so forward uses
/// the dense shared weights. Storage is shared with `adapters`.
AdapterSet merge_experts(const AdapterSet& adapters);

/// Reassembles a dense matrix from separately held expert copies:
/// W[e] = copies[owner(e)][e].
Tensor jigsaw_merge(std::span<const Tensor> copies, const MaskSet& masks);

/// Logits under `mode`. Stochastic mode draws one expert per split projection
/// from `rng` (required for that mode); ensemble averages the N
/// single-expert logits. A fixed index >= N raises IndexError.
Tensor infer(const FrozenModel& model, const AdapterSet& adapters, const Tensor& images,
             const InferenceMode& mode, Rng* rng = nullptr);

struct EvalReport {
  InferenceMode mode;
  double top1 = 0.0;
  std::size_t num_samples = 0;
  std::size_t params_excl_head = 0;
  std::uint64_t flops_adapter = 0;  // adapter-branch matmul MACs per image

  static std::string csv_header() { return "mode,top1,params_excl_head,flops_adapter,seed"; }
  std::string csv_row() const;
};

/// Top-1 accuracy over `split` in order, `batch_size` images at a time.
/// Stochastic mode reseeds from mode.seed, so results are deterministic.
/// With `feature_dump`, writes one CSV line `label,f0,...` of pooled features
/// per sample. An empty split raises DataError.
EvalReport evaluate(const FrozenModel& model, const AdapterSet& adapters, const Dataset& split,
                    const InferenceMode& mode, std::size_t batch_size = 256,
                    const std::optional<std::filesystem::path>& feature_dump = std::nullopt);

/// Trainable entries excluding the classifier head: adapter entries (retained
/// entries only when pruned) plus trainable backbone tensors.
std::size_t count_trainable_params(const FrozenModel& model, const AdapterSet& adapters);

/// Number of `*.bias` entries in the backbone (head excluded).
std::size_t backbone_bias_count(const BackboneConfig& cfg);

}  // namespace mosa
