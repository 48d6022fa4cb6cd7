// SPDX-License-Identifier: Apache-2.0
#include "mosa/adapters.hpp"

#include <array>
#include <cmath>

#include "mosa/adapter_set.hpp"
#include "mosa/errors.hpp"
#include "mosa/flops.hpp"
#include "mosa/ops.hpp"

namespace mosa {

namespace {

Tensor kaiming_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> w(fan_in * fan_out);
  for (auto& v : w) v = rng.uniform(-bound, bound);
  return Tensor({fan_in, fan_out}, std::move(w), true);
}

void check_expert(const Projection& p, std::optional<std::size_t> expert, const char* which) {
  if (!expert) return;
  if (*expert >= p.num_experts()) {
    throw IndexError(std::string(which) + " expert index " + std::to_string(*expert) +
                     " out of range for " + std::to_string(p.num_experts()) + " experts");
  }
}

void zero_outside(Tensor& w, const Mask& keep) {
  auto data = w.mutable_data();
  for (std::size_t i = 0; i < data.size(); ++i)
    if (!keep[i]) data[i] = 0.0;
}

}  // namespace

void AdapterConfig::validate(std::size_t d) const {
  if (bottleneck_dim < 1) throw ConfigError("bottleneck_dim must be >= 1");
  if (num_experts < 1 || num_experts > d * bottleneck_dim) {
    throw ConfigError("num_experts must lie in [1, d*r] = [1, " +
                      std::to_string(d * bottleneck_dim) + "], got " +
                      std::to_string(num_experts));
  }
  if (hierarchical && (sparsify_down || !sparsify_up)) {
    throw ConfigError("hierarchical requires sparsify_down = false and sparsify_up = true");
  }
  if (kind == AdapterKind::kLora && sparsify_down) {
    throw ConfigError("LoRA modules split only the B factor; sparsify_down must be false");
  }
  if (!(retain_fraction > 0.0 && retain_fraction <= 1.0)) {
    throw ConfigError("retain_fraction must lie in (0, 1]");
  }
  if (retain_fraction < 1.0 && num_experts > 1) {
    throw ConfigError("retain_fraction < 1 (pruning baseline) requires num_experts = 1");
  }
  if (!std::isfinite(scale)) throw ConfigError("adapter scale must be finite");
  if (kind == AdapterKind::kLora && lora_targets.empty()) {
    throw ConfigError("lora_targets must name at least one projection");
  }
}

Tensor Projection::effective(std::optional<std::size_t> expert) const {
  check_expert(*this, expert, "projection");
  if (experts && expert) {
    if (retained.empty()) return masked(weight, experts->mask(*expert));
    Mask m(retained);
    auto e = experts->mask(*expert);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] &= e[i];
    return masked(weight, m);
  }
  if (!retained.empty()) return masked(weight, retained);
  return weight;
}

Tensor Projection::apply(const Tensor& x, std::optional<std::size_t> expert) const {
  Tensor y = matmul(x, effective(expert));
  return bias.defined() ? add_bias(y, bias) : y;
}

std::optional<Mask> Projection::step_mask(std::span<const std::size_t> active) const {
  if (experts && !active.empty()) {
    Mask m = experts->union_of(active);
    if (!retained.empty())
      for (std::size_t i = 0; i < m.size(); ++i) m[i] &= retained[i];
    return m;
  }
  if (!retained.empty()) return retained;
  return std::nullopt;
}

SparseExpertAdapter::SparseExpertAdapter(std::size_t d, const AdapterConfig& cfg, Rng& init_rng,
                                         Rng& mask_rng)
    : cfg_(cfg) {
  cfg.validate(d);
  const std::size_t r = cfg.bottleneck_dim;
  down_.weight = kaiming_uniform(d, r, init_rng);
  up_.weight = Tensor::zeros({r, d}, true);
  if (cfg.use_bias) {
    down_.bias = Tensor::zeros({r}, true);
    up_.bias = Tensor::zeros({d}, true);
  }
  if (cfg.splits_down()) down_.experts = split_masks(d, r, cfg.num_experts, mask_rng);
  if (cfg.splits_up()) up_.experts = split_masks(r, d, cfg.num_experts, mask_rng);
  if (cfg.retain_fraction < 1.0) build_sparse_adapter_baseline(*this, cfg.retain_fraction, mask_rng);
}

SparseExpertAdapter::SparseExpertAdapter(Projection down, Projection up, const AdapterConfig& cfg)
    : down_(std::move(down)), up_(std::move(up)), cfg_(cfg) {
  if (down_.weight.rank() != 2 || up_.weight.rank() != 2 ||
      down_.weight.dim(1) != up_.weight.dim(0) || down_.weight.dim(0) != up_.weight.dim(1)) {
    throw DimensionError("adapter: projections " + shape_str(down_.weight.shape()) + " and " +
                         shape_str(up_.weight.shape()) + " do not form a bottleneck");
  }
}

std::size_t SparseExpertAdapter::num_experts() const {
  return std::max(down_.num_experts(), up_.num_experts());
}

Tensor SparseExpertAdapter::branch(const Tensor& x, const ExpertChoice& choice) const {
  if (x.rank() != 2 || x.dim(1) != dim()) {
    throw DimensionError("adapter: input " + shape_str(x.shape()) + " does not end in d = " +
                         std::to_string(dim()));
  }
  check_expert(down_, choice.down, "down");
  check_expert(up_, choice.up, "up");
  AdapterBranchScope flops;
  Tensor h = matmul(x, down_.effective(choice.down));
  if (down_.bias.defined()) h = add_bias(h, down_.bias);
  h = cfg_.activation == Activation::kGelu ? gelu(h) : relu(h);
  Tensor out = matmul(h, up_.effective(choice.up));
  if (cfg_.scale != 1.0) out = scale(out, cfg_.scale);
  if (up_.bias.defined()) out = add_bias(out, up_.bias);
  return out;
}

Tensor SparseExpertAdapter::forward(const Tensor& x, const ExpertChoice& choice) const {
  return add(x, branch(x, choice));
}

Tensor adapter_forward_standard(const SparseExpertAdapter& adapter, const Tensor& x) {
  return adapter.forward(x, ExpertChoice{});
}

Tensor adapter_forward_expert(const SparseExpertAdapter& adapter, const Tensor& x,
                              std::optional<std::size_t> down_idx, std::size_t up_idx) {
  const bool down_split = adapter.down().experts.has_value();
  if (down_split != down_idx.has_value()) {
    throw IndexError(down_split ? "adapter: split down-projection needs a down expert index"
                                : "adapter: dense down-projection takes no down expert index");
  }
  if (!adapter.up().experts && up_idx != 0) {
    throw IndexError("adapter: dense up-projection only has expert 0");
  }
  ExpertChoice choice{down_idx, adapter.up().experts ? std::optional(up_idx) : std::nullopt};
  return adapter.forward(x, choice);
}

LoraModule::LoraModule(std::size_t d, const AdapterConfig& cfg, LoraTarget target, Rng& init_rng,
                       Rng& mask_rng)
    : target_(target), scale_(cfg.scale) {
  cfg.validate(d);
  const std::size_t r = cfg.bottleneck_dim;
  a_.weight = kaiming_uniform(d, r, init_rng);
  b_.weight = Tensor::zeros({r, d}, true);
  if (cfg.splits_up()) b_.experts = split_masks(r, d, cfg.num_experts, mask_rng);
  if (cfg.retain_fraction < 1.0) {
    a_.retained = retain_mask(d, r, cfg.retain_fraction, mask_rng);
    b_.retained = retain_mask(r, d, cfg.retain_fraction, mask_rng);
    zero_outside(a_.weight, a_.retained);
  }
}

LoraModule::LoraModule(Projection a, Projection b, LoraTarget target, double scale)
    : a_(std::move(a)), b_(std::move(b)), target_(target), scale_(scale) {
  if (a_.weight.rank() != 2 || b_.weight.rank() != 2 || a_.weight.dim(1) != b_.weight.dim(0)) {
    throw DimensionError("lora: factors " + shape_str(a_.weight.shape()) + " and " +
                         shape_str(b_.weight.shape()) + " do not chain");
  }
}

Tensor LoraModule::delta(const Tensor& x, std::optional<std::size_t> expert) const {
  if (x.rank() != 2 || x.dim(1) != a_.weight.dim(0)) {
    throw DimensionError("lora: input " + shape_str(x.shape()) + " does not match A " +
                         shape_str(a_.weight.shape()));
  }
  check_expert(b_, expert, "lora");
  AdapterBranchScope flops;
  Tensor out = matmul(matmul(x, a_.effective(std::nullopt)),
                      b_.effective(b_.experts ? expert : std::nullopt));
  return scale_ != 1.0 ? mosa::scale(out, scale_) : out;
}

Tensor lora_forward(const LoraModule& module, const Tensor& x,
                    std::optional<std::size_t> expert_idx) {
  return module.delta(x, expert_idx);
}

void build_sparse_adapter_baseline(SparseExpertAdapter& adapter, double retain_fraction,
                                   Rng& rng) {
  if (!(retain_fraction > 0.0 && retain_fraction <= 1.0)) {
    throw ConfigError("retain_fraction must lie in (0, 1]");
  }
  if (retain_fraction == 1.0) return;
  for (Projection* p : {&adapter.down(), &adapter.up()}) {
    p->retained = retain_mask(p->weight.dim(0), p->weight.dim(1), retain_fraction, rng);
    zero_outside(p->weight, p->retained);
  }
}

std::string to_string(Insertion v) {
  switch (v) {
    case Insertion::kParallelFfn: return "parallel_ffn";
    case Insertion::kPfeiffer: return "pfeiffer";
    case Insertion::kHoulsby: return "houlsby";
  }
  return "?";
}

std::string to_string(Activation v) { return v == Activation::kGelu ? "gelu" : "relu"; }
std::string to_string(AdapterKind v) { return v == AdapterKind::kLora ? "lora" : "adapter"; }
std::string to_string(ExpertPairing v) {
  return v == ExpertPairing::kTied ? "tied" : "independent";
}

std::string to_string(LoraTarget v) {
  switch (v) {
    case LoraTarget::kQuery: return "query";
    case LoraTarget::kKey: return "key";
    case LoraTarget::kValue: return "value";
    case LoraTarget::kOutput: return "output";
  }
  return "?";
}

std::string to_string(AdapterPosition v) {
  return v == AdapterPosition::kAttention ? "attn" : "ffn";
}

// --- AdapterSet -------------------------------------------------------------

AdapterSet AdapterSet::build(std::size_t d, std::size_t num_layers, const AdapterConfig& cfg,
                             const Rng& rng) {
  cfg.validate(d);
  AdapterSet set;
  set.cfg_ = cfg;
  auto next_rngs = [&](std::size_t m) {
    return std::pair{rng.split(1000 + m), rng.split(2000 + m)};
  };
  for (std::size_t layer = 0; layer < num_layers; ++layer) {
    if (cfg.kind == AdapterKind::kLora) {
      for (auto target : cfg.lora_targets) {
        auto [init, masks] = next_rngs(set.modules_.size());
        Module m;
        m.name = "lora." + std::to_string(layer) + "." + to_string(target);
        m.layer = layer;
        m.lora.emplace(d, cfg, target, init, masks);
        set.modules_.push_back(std::move(m));
      }
      continue;
    }
    std::vector<AdapterPosition> positions{AdapterPosition::kFfn};
    if (cfg.insertion == Insertion::kHoulsby) positions.insert(positions.begin(), AdapterPosition::kAttention);
    for (auto pos : positions) {
      auto [init, masks] = next_rngs(set.modules_.size());
      Module m;
      m.name = "adapters." + std::to_string(layer) + "." + to_string(pos);
      m.layer = layer;
      m.position = pos;
      m.adapter.emplace(d, cfg, init, masks);
      set.modules_.push_back(std::move(m));
    }
  }
  return set;
}

AdapterSet AdapterSet::from_modules(AdapterConfig cfg, std::vector<Module> modules, bool merged) {
  AdapterSet set;
  set.cfg_ = std::move(cfg);
  set.modules_ = std::move(modules);
  set.merged_ = merged;
  return set;
}

std::size_t AdapterSet::num_experts() const {
  std::size_t n = 1;
  for (const auto& m : modules_) {
    n = std::max(n, m.adapter ? m.adapter->num_experts() : m.lora->num_experts());
  }
  return n;
}

std::optional<std::size_t> AdapterSet::find_adapter(std::size_t layer, AdapterPosition pos) const {
  for (std::size_t i = 0; i < modules_.size(); ++i) {
    if (modules_[i].adapter && modules_[i].layer == layer && modules_[i].position == pos) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> AdapterSet::find_lora(std::size_t layer, LoraTarget target) const {
  for (std::size_t i = 0; i < modules_.size(); ++i) {
    if (modules_[i].lora && modules_[i].layer == layer && modules_[i].lora->target() == target) {
      return i;
    }
  }
  return std::nullopt;
}

namespace {

const ExpertChoice& choice_for(const Routing& routing, std::size_t module, std::size_t count) {
  static const ExpertChoice kDense{};
  if (routing.empty()) return kDense;
  if (routing.size() != count) {
    throw DimensionError("routing has " + std::to_string(routing.size()) + " entries for " +
                         std::to_string(count) + " adapter modules");
  }
  return routing[module];
}

}  // namespace

Tensor AdapterSet::apply_adapter(std::size_t module, const Tensor& x, const Routing& routing) const {
  return modules_.at(module).adapter->forward(x, choice_for(routing, module, modules_.size()));
}

Tensor AdapterSet::lora_delta(std::size_t module, const Tensor& x, const Routing& routing) const {
  return modules_.at(module).lora->delta(x, choice_for(routing, module, modules_.size()).up);
}

std::vector<AdapterSet::Param> AdapterSet::parameters() const {
  std::vector<Param> out;
  for (std::size_t i = 0; i < modules_.size(); ++i) {
    const auto& m = modules_[i];
    auto push = [&](const std::string& suffix, const Projection& p) {
      out.push_back({m.name + suffix + ".weight", p.weight, i, &p, true});
      if (p.bias.defined()) out.push_back({m.name + suffix + ".bias", p.bias, i, &p, false});
    };
    if (m.adapter) {
      push(".down", m.adapter->down());
      push(".up", m.adapter->up());
    } else {
      push(".A", m.lora->a());
      push(".B", m.lora->b());
    }
  }
  return out;
}

std::vector<std::optional<Mask>> AdapterSet::step_masks(const Routing& first,
                                                        const Routing* second) const {
  std::vector<std::optional<Mask>> out;
  for (const auto& p : parameters()) {
    if (!p.is_weight) {
      out.emplace_back(std::nullopt);
      continue;
    }
    const auto& m = modules_[p.module];
    const bool is_down = m.adapter ? p.projection == &m.adapter->down()
                                   : p.projection == &m.lora->a();
    std::vector<std::size_t> active;
    auto collect = [&](const Routing& r) {
      if (r.empty()) return;
      const auto& c = r.at(p.module);
      const auto& idx = is_down ? c.down : c.up;
      if (idx) active.push_back(*idx);
    };
    collect(first);
    if (second) collect(*second);
    if (p.projection->experts && active.empty() && !first.empty()) {
      out.emplace_back(Mask(p.tensor.numel(), 0));
      continue;
    }
    out.push_back(p.projection->step_mask(active));
  }
  return out;
}

Routing AdapterSet::uniform_routing(std::size_t k) const {
  Routing r;
  for (const auto& m : modules_) {
    ExpertChoice c;
    if (m.adapter) {
      if (m.adapter->down().experts) c.down = k;
      if (m.adapter->up().experts) c.up = k;
    } else if (m.lora->b().experts) {
      c.up = k;
    }
    r.push_back(c);
  }
  return r;
}

std::size_t AdapterSet::stored_parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

std::size_t AdapterSet::trainable_parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) {
    if (p.is_weight && !p.projection->retained.empty()) {
      n += count_ones(p.projection->retained);
    } else {
      n += p.tensor.numel();
    }
  }
  return n;
}

AdapterSet AdapterSet::merged_copy() const {
  AdapterSet out = *this;
  for (auto& m : out.modules_) {
    const std::array<Projection*, 2> projections =
        m.adapter ? std::array<Projection*, 2>{&m.adapter->down(), &m.adapter->up()}
                  : std::array<Projection*, 2>{&m.lora->a(), &m.lora->b()};
    for (Projection* p : projections) {
      if (p->experts) {
        p->experts->validate();
        p->experts.reset();
      }
    }
  }
  out.merged_ = true;
  return out;
}

}  // namespace mosa
