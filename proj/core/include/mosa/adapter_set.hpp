// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "mosa/adapters.hpp"

namespace mosa {

enum class AdapterPosition { kAttention, kFfn };

/// All adapter or LoRA modules attached to one backbone, in a fixed order
/// (layer-major). Module order is also the Routing order.
class AdapterSet {
 public:
  struct Module {
    std::string name;
    std::size_t layer = 0;
    AdapterPosition position = AdapterPosition::kFfn;
    std::optional<SparseExpertAdapter> adapter;
    std::optional<LoraModule> lora;
  };

  struct Param {
    std::string name;
    Tensor tensor;
    std::size_t module = 0;
    const Projection* projection = nullptr;
    bool is_weight = false;
  };

  AdapterSet() = default;

  /// Builds every module for a d-wide, num_layers-deep backbone. Module m
  /// draws its weights from rng.split(1000 + m) and masks from rng.split(2000 + m).
  static AdapterSet build(std::size_t d, std::size_t num_layers, const AdapterConfig& cfg,
                          const Rng& rng);
  static AdapterSet from_modules(AdapterConfig cfg, std::vector<Module> modules, bool merged);

  bool empty() const { return modules_.empty(); }
  std::size_t size() const { return modules_.size(); }
  const AdapterConfig& config() const { return cfg_; }
  std::size_t num_experts() const;
  bool merged() const { return merged_; }

  std::vector<Module>& modules() { return modules_; }
  const std::vector<Module>& modules() const { return modules_; }

  std::optional<std::size_t> find_adapter(std::size_t layer, AdapterPosition pos) const;
  std::optional<std::size_t> find_lora(std::size_t layer, LoraTarget target) const;

  /// Adapter module output (residual included) under `routing`.
  Tensor apply_adapter(std::size_t module, const Tensor& x, const Routing& routing) const;
  Tensor lora_delta(std::size_t module, const Tensor& x, const Routing& routing) const;

  /// Trainable tensors in a fixed order.
  std::vector<Param> parameters() const;

  /// Per-parameter update masks (aligned with parameters()) when the experts
  /// in `first` and, if given, `second` were active. nullopt = all entries.
  std::vector<std::optional<Mask>> step_masks(const Routing& first,
                                              const Routing* second = nullptr) const;

  /// Routing that activates expert k on every split projection.
  Routing uniform_routing(std::size_t k) const;

  /// Entries held in storage (weights + biases) across all modules.
  std::size_t stored_parameter_count() const;
  /// Entries that can receive updates (pruned entries excluded).
  std::size_t trainable_parameter_count() const;

  /// Drops the expert split after checking every MaskSet is a partition;
  /// forward then uses the dense shared weights.
  AdapterSet merged_copy() const;

 private:
  AdapterConfig cfg_;
  std::vector<Module> modules_;
  bool merged_ = false;
};

std::string to_string(AdapterPosition v);

}  // namespace mosa
