// SPDX-License-Identifier: Apache-2.0
#include "mosa/backbone.hpp"

#include <cmath>
#include <cstring>

#include "mosa/errors.hpp"
#include "mosa/ops.hpp"

namespace mosa {

void BackboneConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("image_size (" + std::to_string(image_size) +
                      ") must be a positive multiple of patch_size (" +
                      std::to_string(patch_size) + ")");
  }
  if (channels == 0) throw ConfigError("channels must be >= 1");
  if (num_heads == 0 || embed_dim == 0 || embed_dim % num_heads != 0) {
    throw ConfigError("embed_dim (" + std::to_string(embed_dim) +
                      ") must be divisible by num_heads (" + std::to_string(num_heads) + ")");
  }
  if (num_layers < 2) throw ConfigError("num_layers must be >= 2");
  if (!(mlp_ratio > 0.0) || hidden_dim() == 0) throw ConfigError("mlp_ratio must be positive");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
}

FrozenModel::FrozenModel(BackboneConfig cfg, std::vector<Parameter> params)
    : cfg_(cfg), params_(std::move(params)) {
  for (auto& p : params_) p.tensor.set_requires_grad(p.trainable);
}

std::size_t FrozenModel::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return i;
  throw InvariantError("model has no parameter '" + name + "'");
}

const Tensor& FrozenModel::get(const std::string& name) const { return params_[index_of(name)].tensor; }

bool FrozenModel::contains(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return true;
  return false;
}

void FrozenModel::set_trainable(const std::string& name, bool on) {
  auto& p = params_[index_of(name)];
  p.trainable = on;
  p.tensor.set_requires_grad(on);
}

void FrozenModel::unfreeze_biases() {
  for (auto& p : params_) {
    const auto& n = p.name;
    if (!is_head(n) && n.size() > 5 && n.compare(n.size() - 5, 5, ".bias") == 0) {
      p.trainable = true;
      p.tensor.set_requires_grad(true);
    }
  }
}

std::vector<Parameter> FrozenModel::trainable() const {
  std::vector<Parameter> out;
  for (const auto& p : params_)
    if (p.trainable) out.push_back(p);
  return out;
}

std::vector<unsigned char> FrozenModel::backbone_bytes() const {
  std::vector<unsigned char> out;
  for (const auto& p : params_) {
    if (is_head(p.name)) continue;
    auto d = p.tensor.data();
    const auto* b = reinterpret_cast<const unsigned char*>(d.data());
    out.insert(out.end(), b, b + d.size() * sizeof(double));
  }
  return out;
}

namespace {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

FrozenModel build_backbone(const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.embed_dim;
  const std::size_t patch_dim = cfg.channels * cfg.patch_size * cfg.patch_size;
  const std::size_t hidden = cfg.hidden_dim();
  std::vector<Parameter> params;
  auto add = [&](std::string name, Tensor t, bool trainable = false) {
    params.push_back({std::move(name), std::move(t), trainable});
  };
  auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
    add(name + ".weight", normal_tensor({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng));
    add(name + ".bias", normal_tensor({out}, 0.02, rng));
  };
  auto norm = [&](const std::string& name) {
    add(name + ".weight", Tensor::full({d}, 1.0));
    add(name + ".bias", Tensor::zeros({d}));
  };

  linear("patch_embed", patch_dim, d);
  if (cfg.use_cls_token) add("cls_token", normal_tensor({1, d}, 0.02, rng));
  add("pos_embed", normal_tensor({cfg.num_tokens(), d}, 0.02, rng));
  for (std::size_t i = 0; i < cfg.num_layers; ++i) {
    const std::string b = "blocks." + std::to_string(i);
    norm(b + ".norm1");
    linear(b + ".attn.query", d, d);
    linear(b + ".attn.key", d, d);
    linear(b + ".attn.value", d, d);
    linear(b + ".attn.proj", d, d);
    norm(b + ".norm2");
    linear(b + ".mlp.fc1", d, hidden);
    linear(b + ".mlp.fc2", hidden, d);
  }
  norm("norm");
  add("head.weight", normal_tensor({d, cfg.num_classes}, 0.02, rng), true);
  add("head.bias", Tensor::zeros({cfg.num_classes}), true);
  return FrozenModel(cfg, std::move(params));
}

void reset_head(FrozenModel& model, Rng& rng) {
  auto w = model.get("head.weight");
  for (auto& v : w.mutable_data()) v = rng.normal(0.0, 0.02);
  auto b = model.get("head.bias");
  for (auto& v : b.mutable_data()) v = 0.0;
}

namespace {

Tensor linear(const FrozenModel& m, const std::string& name, const Tensor& x) {
  return add_bias(matmul(x, m.get(name + ".weight")), m.get(name + ".bias"));
}

Tensor norm(const FrozenModel& m, const std::string& name, const Tensor& x) {
  return layer_norm(x, m.get(name + ".weight"), m.get(name + ".bias"));
}

Tensor shadowed(const FrozenModel& m, const std::string& block, const char* proj, LoraTarget target,
                const Tensor& x, const AdapterSet& adapters, const Routing& routing,
                std::size_t layer) {
  Tensor y = linear(m, block + ".attn." + proj, x);
  if (auto idx = adapters.find_lora(layer, target)) y = add(y, adapters.lora_delta(*idx, x, routing));
  return y;
}

}  // namespace

ForwardResult forward(const FrozenModel& model, const Tensor& images, const AdapterSet& adapters,
                      const Routing& routing) {
  const auto& cfg = model.config();
  if (images.rank() != 4 || images.dim(1) != cfg.channels || images.dim(2) != cfg.image_size ||
      images.dim(3) != cfg.image_size) {
    throw DimensionError("forward: images " + shape_str(images.shape()) + " do not match [B x " +
                         std::to_string(cfg.channels) + " x " + std::to_string(cfg.image_size) +
                         " x " + std::to_string(cfg.image_size) + "]");
  }
  for (const auto& m : adapters.modules()) {
    const std::size_t md = m.adapter ? m.adapter->dim() : m.lora->a().weight.dim(0);
    if (md != cfg.embed_dim || m.layer >= cfg.num_layers) {
      throw ConfigError("adapter module " + m.name + " is incompatible with d = " +
                        std::to_string(cfg.embed_dim) + ", L = " + std::to_string(cfg.num_layers));
    }
  }
  const std::size_t batch = images.dim(0);
  const std::size_t tokens = cfg.num_tokens();

  Tensor x = linear(model, "patch_embed", patchify(images, cfg.patch_size));
  if (cfg.use_cls_token) x = prepend_token(x, model.get("cls_token"), batch);
  x = add_tiled(x, model.get("pos_embed"));

  ForwardResult result;
  result.features.reserve(cfg.num_layers);
  const auto insertion = adapters.config().insertion;
  for (std::size_t i = 0; i < cfg.num_layers; ++i) {
    const std::string b = "blocks." + std::to_string(i);
    Tensor n1 = norm(model, b + ".norm1", x);
    Tensor q = shadowed(model, b, "query", LoraTarget::kQuery, n1, adapters, routing, i);
    Tensor k = shadowed(model, b, "key", LoraTarget::kKey, n1, adapters, routing, i);
    Tensor v = shadowed(model, b, "value", LoraTarget::kValue, n1, adapters, routing, i);
    Tensor a = attention(q, k, v, batch, tokens, cfg.num_heads);
    a = shadowed(model, b, "proj", LoraTarget::kOutput, a, adapters, routing, i);
    Tensor h = add(x, a);
    if (auto idx = adapters.find_adapter(i, AdapterPosition::kAttention)) {
      h = adapters.apply_adapter(*idx, h, routing);
    }

    Tensor mlp = linear(model, b + ".mlp.fc2",
                        gelu(linear(model, b + ".mlp.fc1", norm(model, b + ".norm2", h))));
    auto ffn = adapters.find_adapter(i, AdapterPosition::kFfn);
    if (ffn && insertion == Insertion::kParallelFfn) {
      x = add(adapters.apply_adapter(*ffn, h, routing), mlp);
    } else if (ffn) {
      x = adapters.apply_adapter(*ffn, add(h, mlp), routing);
    } else {
      x = add(h, mlp);
    }
    result.features.push_back(x);
  }

  Tensor out = norm(model, "norm", x);
  result.pooled = cfg.use_cls_token ? select_token(out, batch, tokens, 0)
                                    : mean_tokens(out, batch, tokens);
  result.logits = linear(model, "head", result.pooled);
  return result;
}

}  // namespace mosa
