// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mosa/adapter_set.hpp"
#include "mosa/rng.hpp"
#include "mosa/tensor.hpp"

namespace mosa {

struct BackboneConfig {
  std::size_t image_size = 16;
  std::size_t patch_size = 4;
  std::size_t channels = 3;
  std::size_t embed_dim = 64;
  std::size_t num_layers = 4;
  std::size_t num_heads = 4;
  double mlp_ratio = 4.0;
  std::size_t num_classes = 10;
  bool use_cls_token = true;

  /// Throws ConfigError naming the violated constraint.
  void validate() const;

  std::size_t num_patches() const {
    const auto g = image_size / patch_size;
    return g * g;
  }
  std::size_t num_tokens() const { return num_patches() + (use_cls_token ? 1 : 0); }
  std::size_t hidden_dim() const {
    return static_cast<std::size_t>(static_cast<double>(embed_dim) * mlp_ratio);
  }
};

struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = false;
};

/// ViT-style encoder with a linear classifier. Backbone tensors are frozen
/// (requires_grad = false); the `head.*` tensors are trainable.
class FrozenModel {
 public:
  FrozenModel(BackboneConfig cfg, std::vector<Parameter> params);

  const BackboneConfig& config() const { return cfg_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  void set_trainable(const std::string& name, bool on);
  /// Marks every backbone `*.bias` tensor trainable (bias-only tuning).
  void unfreeze_biases();

  std::vector<Parameter> trainable() const;
  /// Serialized bytes of all non-head tensors, for frozen-weight audits.
  std::vector<unsigned char> backbone_bytes() const;

  static bool is_head(const std::string& name) { return name.rfind("head.", 0) == 0; }

 private:
  std::size_t index_of(const std::string& name) const;

  BackboneConfig cfg_;
  std::vector<Parameter> params_;
};

/// Builds and initializes the backbone and head from `rng`. Linear weights
/// ~ N(0, 1/fan_in), biases ~ N(0, 0.02^2), CLS and positional tables
/// ~ N(0, 0.02^2), LayerNorm at identity, head weights ~ N(0, 0.02^2).
FrozenModel build_backbone(const BackboneConfig& cfg, Rng& rng);

/// Re-draws the classifier head: weights ~ N(0, 0.02^2), bias zero.
void reset_head(FrozenModel& model, Rng& rng);

struct ForwardResult {
  Tensor logits;                // [B x num_classes]
  std::vector<Tensor> features;  // per block output after its second residual add, [(B*T) x d]
  Tensor pooled;                // [B x d] after final norm (CLS or token mean)
};

/// Pre-norm encoder blocks with adapters inserted per the adapter config:
///   parallel_ffn  out = A(h) + MLP(LN2(h))           (A includes its residual)
///   pfeiffer      out = A(h + MLP(LN2(h)))
///   houlsby       h = A_attn(x + Attn(LN1(x))), out = A_ffn(h + MLP(LN2(h)))
/// LoRA modules add their delta to the shadowed attention projection.
ForwardResult forward(const FrozenModel& model, const Tensor& images, const AdapterSet& adapters,
                      const Routing& routing = {});

}  // namespace mosa
