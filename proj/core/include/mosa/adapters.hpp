// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mosa/masks.hpp"
#include "mosa/rng.hpp"
#include "mosa/tensor.hpp"

namespace mosa {

enum class Insertion { kParallelFfn, kPfeiffer, kHoulsby };
enum class Activation { kRelu, kGelu };
enum class AdapterKind { kAdapter, kLora };
enum class ExpertPairing { kIndependent, kTied };
enum class LoraTarget { kQuery, kKey, kValue, kOutput };

struct AdapterConfig {
  std::size_t bottleneck_dim = 8;
  std::size_t num_experts = 1;
  bool hierarchical = true;  // dense down-projection, experts on the up-projection
  bool sparsify_down = false;
  bool sparsify_up = true;
  Insertion insertion = Insertion::kParallelFfn;
  Activation activation = Activation::kRelu;
  double scale = 1.0;
  bool use_bias = true;
  AdapterKind kind = AdapterKind::kAdapter;
  /// Below 1 prunes both projections once before tuning (SparseAdapter,
  /// SparseLoRA). Exclusive with num_experts > 1.
  double retain_fraction = 1.0;
  ExpertPairing pairing = ExpertPairing::kIndependent;
  std::vector<LoraTarget> lora_targets{LoraTarget::kQuery, LoraTarget::kValue};

  /// Throws ConfigError for an invalid combination against model width d.
  void validate(std::size_t d) const;

  bool splits_down() const { return kind == AdapterKind::kAdapter && sparsify_down; }
  bool splits_up() const { return sparsify_up; }
};

/// Active expert per projection for one module; nullopt = dense weight.
struct ExpertChoice {
  std::optional<std::size_t> down;
  std::optional<std::size_t> up;
  friend bool operator==(const ExpertChoice&, const ExpertChoice&) = default;
};

/// One choice per adapter module, in AdapterSet module order. An empty
/// routing selects the merged (dense) weights everywhere.
using Routing = std::vector<ExpertChoice>;

/// A weight matrix with optional bias, expert split and pruning mask.
/// Experts are masked views of the single shared `weight`.
struct Projection {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out], undefined when biases are off
  std::optional<MaskSet> experts;
  Mask retained;  // empty = no pruning

  /// weight with the expert and pruning masks applied (dense when `expert`
  /// is nullopt or there is no split).
  Tensor effective(std::optional<std::size_t> expert) const;
  Tensor apply(const Tensor& x, std::optional<std::size_t> expert) const;
  /// Entries an optimizer step may touch when `active` experts ran.
  std::optional<Mask> step_mask(std::span<const std::size_t> active) const;
  std::size_t num_experts() const { return experts ? experts->size() : 1; }
};

/// Bottleneck adapter x + scale * f(x W_down + b_down) W_up + b_up whose
/// projections may be split into sparse experts.
class SparseExpertAdapter {
 public:
  SparseExpertAdapter(std::size_t d, const AdapterConfig& cfg, Rng& init_rng, Rng& mask_rng);
  SparseExpertAdapter(Projection down, Projection up, const AdapterConfig& cfg);

  const AdapterConfig& config() const { return cfg_; }
  std::size_t dim() const { return down_.weight.dim(0); }
  std::size_t num_experts() const;

  Projection& down() { return down_; }
  Projection& up() { return up_; }
  const Projection& down() const { return down_; }
  const Projection& up() const { return up_; }

  /// Branch term scale * f(x W_down + b_down) W_up + b_up (no residual).
  Tensor branch(const Tensor& x, const ExpertChoice& choice) const;
  Tensor forward(const Tensor& x, const ExpertChoice& choice) const;

 private:
  Projection down_;
  Projection up_;
  AdapterConfig cfg_;
};

/// Dense forward (all weights, pruning masks kept).
Tensor adapter_forward_standard(const SparseExpertAdapter& adapter, const Tensor& x);
/// Forward through expert (down_idx, up_idx). `down_idx` must be given exactly
/// when the down-projection is split.
Tensor adapter_forward_expert(const SparseExpertAdapter& adapter, const Tensor& x,
                              std::optional<std::size_t> down_idx, std::size_t up_idx);

/// Low-rank delta x A (B * M) for a shadowed d x d linear; B starts at zero.
class LoraModule {
 public:
  LoraModule(std::size_t d, const AdapterConfig& cfg, LoraTarget target, Rng& init_rng,
             Rng& mask_rng);
  LoraModule(Projection a, Projection b, LoraTarget target, double scale);

  LoraTarget target() const { return target_; }
  double scale() const { return scale_; }
  Projection& a() { return a_; }
  Projection& b() { return b_; }
  const Projection& a() const { return a_; }
  const Projection& b() const { return b_; }
  std::size_t num_experts() const { return b_.num_experts(); }

  Tensor delta(const Tensor& x, std::optional<std::size_t> expert) const;

 private:
  Projection a_;
  Projection b_;
  LoraTarget target_;
  double scale_;
};

Tensor lora_forward(const LoraModule& module, const Tensor& x,
                    std::optional<std::size_t> expert_idx = std::nullopt);

/// SparseAdapter baseline: one random pruning mask per projection, applied to
/// the weights now and to every later forward and step.
void build_sparse_adapter_baseline(SparseExpertAdapter& adapter, double retain_fraction,
                                   Rng& rng);

std::string to_string(Insertion v);
std::string to_string(Activation v);
std::string to_string(AdapterKind v);
std::string to_string(ExpertPairing v);
std::string to_string(LoraTarget v);

}  // namespace mosa
