// SPDX-License-Identifier: Apache-2.0
#include "mosa/experiment.hpp"

#include <algorithm>

#include "mosa/errors.hpp"
#include "mosa/inference.hpp"
#include "mosa/training.hpp"

namespace mosa {

namespace {

AdapterSet build_adapters(const RunConfig& cfg) {
  if (cfg.tuning != Tuning::kAdapter) {
    return AdapterSet::from_modules(cfg.adapter, {}, cfg.merged);
  }
  AdapterSet set = AdapterSet::build(cfg.backbone.embed_dim, cfg.backbone.num_layers, cfg.adapter,
                                     stream_rng(cfg.plan.seed, Stream::kAdapterInit));
  return cfg.merged ? set.merged_copy() : set;
}

struct MaskedProjection {
  std::string name;
  Projection* projection;
};

std::vector<MaskedProjection> projections(AdapterSet& set) {
  std::vector<MaskedProjection> out;
  for (auto& m : set.modules()) {
    if (m.adapter) {
      out.push_back({m.name + ".down.weight", &m.adapter->down()});
      out.push_back({m.name + ".up.weight", &m.adapter->up()});
    } else {
      out.push_back({m.name + ".A.weight", &m.lora->a()});
      out.push_back({m.name + ".B.weight", &m.lora->b()});
    }
  }
  return out;
}

void restore(const Checkpoint& ckpt, const std::string& name, Tensor t) {
  const NamedTensor* rec = ckpt.find_tensor(name);
  if (rec == nullptr) throw FormatError("checkpoint has no tensor '" + name + "'");
  if (rec->shape != t.shape()) {
    throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(rec->shape) +
                      ", expected " + shape_str(t.shape()));
  }
  std::copy(rec->values.begin(), rec->values.end(), t.mutable_data().begin());
}

Mask restore_mask(const Checkpoint& ckpt, const std::string& name, std::size_t rows,
                  std::size_t cols) {
  const NamedMask* rec = ckpt.find_mask(name);
  if (rec == nullptr) throw FormatError("checkpoint has no mask '" + name + "'");
  if (rec->rows != rows || rec->cols != cols) {
    throw FormatError("checkpoint mask '" + name + "' has the wrong dimensions");
  }
  return rec->bits;
}

}  // namespace

Experiment make_experiment(const RunConfig& cfg) {
  cfg.validate();
  Rng backbone_rng(cfg.backbone_seed);
  FrozenModel model = build_backbone(cfg.backbone, backbone_rng);
  Rng head_rng = stream_rng(cfg.plan.seed, Stream::kHeadInit);
  reset_head(model, head_rng);
  if (cfg.tuning == Tuning::kBitfit) model.unfreeze_biases();
  return Experiment{cfg, std::move(model), build_adapters(cfg), {}};
}

Checkpoint to_checkpoint(const Experiment& exp) {
  Checkpoint ckpt;
  RunConfig cfg = exp.config;
  cfg.merged = exp.adapters.merged();
  ckpt.config = config_text(cfg);
  auto add = [&](const std::string& name, const Tensor& t) {
    const auto d = t.data();
    ckpt.tensors.push_back({name, t.shape(), std::vector<double>(d.begin(), d.end())});
  };
  for (const auto& p : exp.model.parameters()) add(p.name, p.tensor);
  for (const auto& p : exp.adapters.parameters()) add(p.name, p.tensor);

  AdapterSet& adapters = const_cast<AdapterSet&>(exp.adapters);
  for (const auto& [name, proj] : projections(adapters)) {
    const auto rows = static_cast<std::uint32_t>(proj->weight.dim(0));
    const auto cols = static_cast<std::uint32_t>(proj->weight.dim(1));
    if (proj->experts) {
      for (std::size_t k = 0; k < proj->experts->size(); ++k) {
        ckpt.masks.push_back({name + ".expert" + std::to_string(k), rows, cols,
                              proj->experts->masks()[k]});
      }
    }
    if (!proj->retained.empty()) ckpt.masks.push_back({name + ".retained", rows, cols, proj->retained});
  }

  for (const auto& [name, m] : exp.optimizer.moments) {
    ckpt.tensors.push_back({"optim.m." + name, {m.first.size()}, m.first});
    ckpt.tensors.push_back({"optim.v." + name, {m.second.size()}, m.second});
  }
  ckpt.tensors.push_back({"optim.step", {1}, {static_cast<double>(exp.optimizer.step)}});
  return ckpt;
}

Experiment from_checkpoint(const Checkpoint& ckpt) {
  ParsedConfig parsed = parse_config(ckpt.config);
  Experiment exp = make_experiment(parsed.config);
  for (const auto& p : exp.model.parameters()) restore(ckpt, p.name, p.tensor);
  for (const auto& p : exp.adapters.parameters()) restore(ckpt, p.name, p.tensor);

  for (auto& [name, proj] : projections(exp.adapters)) {
    const std::size_t rows = proj->weight.dim(0);
    const std::size_t cols = proj->weight.dim(1);
    if (proj->experts) {
      std::vector<Mask> masks;
      for (std::size_t k = 0; k < proj->experts->size(); ++k) {
        masks.push_back(restore_mask(ckpt, name + ".expert" + std::to_string(k), rows, cols));
      }
      if (ckpt.find_mask(name + ".expert" + std::to_string(masks.size()))) {
        throw FormatError("checkpoint has more experts than its config for '" + name + "'");
      }
      proj->experts = MaskSet(rows, cols, std::move(masks), proj->experts->seed());
    }
    if (!proj->retained.empty()) proj->retained = restore_mask(ckpt, name + ".retained", rows, cols);
  }

  const std::string m_prefix = "optim.m.";
  for (const auto& t : ckpt.tensors) {
    if (t.name.rfind(m_prefix, 0) != 0) continue;
    const std::string name = t.name.substr(m_prefix.size());
    const NamedTensor* v = ckpt.find_tensor("optim.v." + name);
    if (v == nullptr || v->values.size() != t.values.size()) {
      throw FormatError("checkpoint optimizer moments for '" + name + "' are incomplete");
    }
    exp.optimizer.moments[name] = Moments{t.values, v->values};
  }
  if (const NamedTensor* step = ckpt.find_tensor("optim.step")) {
    if (step->values.size() != 1 || !(step->values[0] >= 0.0)) {
      throw FormatError("checkpoint optim.step is malformed");
    }
    exp.optimizer.step = static_cast<std::uint64_t>(step->values[0]);
  }
  return exp;
}

Experiment merged_experiment(const Experiment& exp) {
  Experiment out{exp.config, exp.model, merge_experts(exp.adapters), exp.optimizer};
  out.config.merged = true;
  return out;
}

std::size_t count_config_params(const RunConfig& cfg) {
  cfg.validate();
  const std::size_t biases =
      cfg.tuning == Tuning::kBitfit ? backbone_bias_count(cfg.backbone) : 0;
  return build_adapters(cfg).trainable_parameter_count() + biases;
}

}  // namespace mosa
