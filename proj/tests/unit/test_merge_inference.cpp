// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mosa/errors.hpp"
#include "mosa/inference.hpp"
#include "mosa/ops.hpp"
#include "mosa/training.hpp"
#include "oracles.hpp"

using namespace mosa;

namespace {

BackboneConfig tiny(std::size_t classes = 3) {
  BackboneConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.channels = 2;
  cfg.embed_dim = 8;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.mlp_ratio = 2.0;
  cfg.num_classes = classes;
  return cfg;
}

AdapterConfig adapter_cfg(std::size_t experts, AdapterKind kind = AdapterKind::kAdapter) {
  AdapterConfig cfg;
  cfg.kind = kind;
  cfg.bottleneck_dim = 4;
  cfg.num_experts = experts;
  return cfg;
}

void randomize(AdapterSet& set, std::uint64_t seed) {
  Rng rng(seed);
  for (const auto& p : set.parameters()) {
    auto t = p.tensor;
    for (auto& v : t.mutable_data()) v = rng.normal(0.0, 0.3);
  }
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor images(const BackboneConfig& cfg, std::size_t batch, std::uint64_t seed) {
  Rng rng(seed);
  return oracle::random_tensor({batch, cfg.channels, cfg.image_size, cfg.image_size}, rng, 1.0,
                               false);
}

Dataset synthetic(std::size_t classes, std::size_t per_class, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.classes = classes;
  spec.samples_per_class = per_class;
  spec.val_per_class = 1;
  spec.image_size = 8;
  spec.channels = 2;
  spec.seed = seed;
  return gen_synthetic(spec).train;
}

/// The same modules with every expert split removed: a plain dense adapter
/// holding the shared matrices.
AdapterSet raw_dense(const AdapterSet& set) {
  std::vector<AdapterSet::Module> modules = set.modules();
  for (auto& m : modules) {
    if (m.adapter) {
      m.adapter->down().experts.reset();
      m.adapter->up().experts.reset();
    }
    if (m.lora) m.lora->b().experts.reset();
  }
  return AdapterSet::from_modules(set.config(), std::move(modules), true);
}

}  // namespace

TEST_CASE("merging an untrained adapter changes nothing") {
  Rng rng(1);
  FrozenModel model = build_backbone(tiny(), rng);
  AdapterSet set = AdapterSet::build(8, 2, adapter_cfg(3), Rng(2));
  const Tensor x = images(tiny(), 4, 3);
  const auto standard = values(forward(model, x, set).logits);
  CHECK(values(forward(model, x, merge_experts(set)).logits) == standard);
  CHECK(values(forward(model, x, AdapterSet{}).logits) == standard);
  CHECK(merge_experts(set).merged());
}

TEST_CASE("jigsaw merge takes each entry from its owning expert") {
  for (std::size_t n : {1, 2, 3, 5}) {
    Rng rng(n);
    MaskSet masks = split_masks(6, 4, n, rng);
    std::vector<Tensor> copies;
    std::vector<std::vector<double>> raw;
    for (std::size_t k = 0; k < n; ++k) {
      copies.push_back(oracle::random_tensor({6, 4}, rng, 1.0, false));
      raw.push_back(values(copies.back()));
    }
    const auto expected = oracle::union_of_copies(raw, masks);
    REQUIRE_FALSE(expected.empty());
    CHECK(values(jigsaw_merge(copies, masks)) == expected);
  }
  Rng rng(0);
  MaskSet masks = split_masks(2, 2, 2, rng);
  std::vector<Tensor> one{Tensor::zeros({2, 2})};
  CHECK_THROWS_AS(jigsaw_merge(one, masks), InvariantError);
}

TEST_CASE("merged storage equals the per-expert copies reassembled") {
  AdapterSet set = AdapterSet::build(8, 2, adapter_cfg(4), Rng(2));
  randomize(set, 4);
  AdapterSet merged = merge_experts(set);
  const Projection& up = set.modules()[0].adapter->up();
  std::vector<std::vector<double>> copies;
  for (std::size_t k = 0; k < 4; ++k) {
    copies.push_back(values(masked(up.weight, up.experts->mask(k))));
  }
  CHECK(values(merged.modules()[0].adapter->up().weight) ==
        oracle::union_of_copies(copies, *up.experts));
}

TEST_CASE("merge rejects an invalid partition") {
  AdapterSet set = AdapterSet::build(8, 2, adapter_cfg(2), Rng(2));
  auto modules = set.modules();
  const std::size_t entries = 4 * 8;
  Mask second(entries, 0);
  second[0] = 1;
  modules[0].adapter->up().experts = MaskSet(4, 8, {Mask(entries, 1), second});
  AdapterSet broken = AdapterSet::from_modules(set.config(), std::move(modules), false);
  CHECK_THROWS_AS(merge_experts(broken), InvariantError);
}

TEST_CASE("merged forward equals the raw dense forward after training") {
  Rng rng(5);
  FrozenModel model = build_backbone(tiny(), rng);
  for (auto kind : {AdapterKind::kAdapter, AdapterKind::kLora}) {
    AdapterSet set = AdapterSet::build(8, 2, adapter_cfg(3, kind), Rng(6));
    Dataset data = synthetic(3, 6, 1);
    TrainPlan plan;
    plan.epochs = 2;
    plan.warmup_epochs = 1;
    plan.batch_size = 6;
    plan.base_lr = 0.05;
    train(model, set, data, nullptr, plan);
    const Tensor x = images(tiny(), 3, 8);
    CHECK(values(forward(model, x, merge_experts(set)).logits) ==
          values(forward(model, x, raw_dense(set)).logits));
    CHECK(values(infer(model, set, x, InferenceMode{})) ==
          values(forward(model, x, raw_dense(set)).logits));
  }
}

TEST_CASE("hierarchical merged delta is the sum of expert deltas") {
  AdapterSet set = AdapterSet::build(8, 1, adapter_cfg(3), Rng(2));
  randomize(set, 8);
  const SparseExpertAdapter& a = *set.modules()[0].adapter;
  Rng rng(9);
  Tensor x = oracle::random_tensor({5, 8}, rng, 1.0, false);
  const auto merged = values(a.branch(x, ExpertChoice{}));
  std::vector<double> total(merged.size(), 0.0);
  const auto b_up = values(a.up().bias);
  for (std::size_t k = 0; k < 3; ++k) {
    const auto d = values(a.branch(x, ExpertChoice{std::nullopt, k}));
    for (std::size_t i = 0; i < d.size(); ++i) total[i] += d[i] - b_up[i % 8];
  }
  for (std::size_t i = 0; i < total.size(); ++i) {
    CHECK(std::abs(total[i] - (merged[i] - b_up[i % 8])) <= 1e-12);
  }
}

TEST_CASE("with one expert every inference mode agrees") {
  Rng rng(7);
  FrozenModel model = build_backbone(tiny(), rng);
  AdapterSet set = AdapterSet::build(8, 2, adapter_cfg(1), Rng(2));
  randomize(set, 3);
  const Tensor x = images(tiny(), 4, 1);
  const auto merged = values(infer(model, set, x, {InferenceVariant::kMerge}));
  Rng srng(1);
  CHECK(values(infer(model, set, x, {InferenceVariant::kFixed})) == merged);
  CHECK(values(infer(model, set, x, {InferenceVariant::kStochastic}, &srng)) == merged);
  CHECK(values(infer(model, set, x, {InferenceVariant::kEnsemble})) == merged);
}

TEST_CASE("ensemble costs exactly N times merge in adapter matmuls") {
  Rng rng(7);
  FrozenModel model = build_backbone(tiny(), rng);
  Dataset data = synthetic(3, 4, 2);
  for (std::size_t n : {1, 2, 3, 4}) {
    for (auto kind : {AdapterKind::kAdapter, AdapterKind::kLora}) {
      AdapterSet set = AdapterSet::build(8, 2, adapter_cfg(n, kind), Rng(2));
      const auto merge = evaluate(model, set, data, {InferenceVariant::kMerge});
      const auto ensemble = evaluate(model, set, data, {InferenceVariant::kEnsemble});
      const auto fixed = evaluate(model, set, data, {InferenceVariant::kFixed});
      CHECK(merge.flops_adapter > 0);
      CHECK(ensemble.flops_adapter == n * merge.flops_adapter);
      CHECK(fixed.flops_adapter == merge.flops_adapter);
    }
  }
}

TEST_CASE("MoSL ensemble of deltas equals the merged delta") {
  AdapterSet set = AdapterSet::build(8, 1, adapter_cfg(4, AdapterKind::kLora), Rng(2));
  randomize(set, 5);
  const LoraModule& m = *set.modules()[0].lora;
  Rng rng(1);
  Tensor x = oracle::random_tensor({6, 8}, rng, 1.0, false);
  const auto merged = values(m.delta(x, std::nullopt));
  std::vector<double> total(merged.size(), 0.0);
  for (std::size_t k = 0; k < 4; ++k) {
    const auto d = values(m.delta(x, k));
    for (std::size_t i = 0; i < d.size(); ++i) total[i] += d[i];
  }
  for (std::size_t i = 0; i < total.size(); ++i) CHECK(std::abs(total[i] - merged[i]) <= 1e-12);
}

TEST_CASE("inference errors") {
  Rng rng(7);
  FrozenModel model = build_backbone(tiny(), rng);
  AdapterSet set = AdapterSet::build(8, 2, adapter_cfg(3), Rng(2));
  const Tensor x = images(tiny(), 2, 1);
  InferenceMode fixed{InferenceVariant::kFixed, 3};
  CHECK_THROWS_AS(infer(model, set, x, fixed), IndexError);
  CHECK_THROWS_AS(infer(model, set, x, {InferenceVariant::kStochastic}), InvariantError);
  Dataset empty = synthetic(3, 1, 0);
  empty.labels.clear();
  empty.pixels.clear();
  CHECK_THROWS_AS(evaluate(model, set, empty, {}), DataError);
  CHECK(parse_variant("ensemble") == InferenceVariant::kEnsemble);
  CHECK_THROWS_AS(parse_variant("vote"), ConfigError);
}

TEST_CASE("stochastic evaluation is seeded") {
  Rng rng(7);
  FrozenModel model = build_backbone(tiny(), rng);
  AdapterSet set = AdapterSet::build(8, 2, adapter_cfg(3), Rng(2));
  randomize(set, 11);
  Dataset data = synthetic(3, 10, 3);
  InferenceMode mode{InferenceVariant::kStochastic, 0, 42};
  CHECK(evaluate(model, set, data, mode, 4).top1 == evaluate(model, set, data, mode, 4).top1);
  CHECK(evaluate(model, set, data, mode, 4).csv_row().rfind("stochastic,", 0) == 0);
}

TEST_CASE("separable two-class data is learned perfectly") {
  BackboneConfig cfg = tiny(2);
  Dataset data;
  data.channels = 2;
  data.height = 8;
  data.width = 8;
  data.num_classes = 2;
  Rng noise(3);
  for (std::size_t i = 0; i < 40; ++i) {
    const std::uint16_t label = i % 2;
    data.labels.push_back(label);
    for (std::size_t p = 0; p < data.sample_numel(); ++p) {
      data.pixels.push_back(static_cast<float>((label ? 1.0 : -1.0) + 0.1 * noise.normal()));
    }
  }
  Rng rng(1);
  FrozenModel model = build_backbone(cfg, rng);
  AdapterSet set = AdapterSet::build(8, 2, adapter_cfg(2), Rng(2));
  TrainPlan plan;
  plan.epochs = 10;
  plan.warmup_epochs = 1;
  plan.batch_size = 8;
  plan.base_lr = 0.1;
  plan.augment.crop = false;
  train(model, set, data, nullptr, plan);
  CHECK(evaluate(model, set, data, {}).top1 == 1.0);
}

TEST_CASE("an untrained classifier sits at chance") {
  const std::size_t classes = 10;
  Dataset data = synthetic(classes, 50, 4);
  Rng rng(2);
  FrozenModel model = build_backbone(tiny(classes), rng);
  AdapterSet set = AdapterSet::build(8, 2, adapter_cfg(2), Rng(2));
  const auto report = evaluate(model, set, data, {});
  const double p = 1.0 / classes;
  const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(data.size()));
  CHECK(report.num_samples == 500);
  CHECK(std::abs(report.top1 - p) <= 3 * sigma);
  CHECK(report.params_excl_head == count_trainable_params(model, set));
}

TEST_CASE("feature dump writes one labelled row per sample") {
  Rng rng(2);
  FrozenModel model = build_backbone(tiny(), rng);
  Dataset data = synthetic(3, 2, 4);
  const auto path = std::filesystem::temp_directory_path() / "mosa_features_test.csv";
  evaluate(model, AdapterSet{}, data, {}, 256, path);
  std::ifstream in(path);
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 8);
  }
  CHECK(rows == data.size());
  std::filesystem::remove(path);
}
