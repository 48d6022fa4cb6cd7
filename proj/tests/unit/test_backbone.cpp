// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "mosa/backbone.hpp"
#include "mosa/errors.hpp"
#include "mosa/grad_check.hpp"
#include "mosa/ops.hpp"
#include "mosa/optimizer.hpp"
#include "oracles.hpp"

using namespace mosa;

namespace {

BackboneConfig tiny() {
  BackboneConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.channels = 2;
  cfg.embed_dim = 8;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.mlp_ratio = 2.0;
  cfg.num_classes = 3;
  return cfg;
}

Tensor images(const BackboneConfig& cfg, std::size_t batch, std::uint64_t seed) {
  Rng rng(seed);
  return oracle::random_tensor({batch, cfg.channels, cfg.image_size, cfg.image_size}, rng, 1.0,
                               false);
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

void randomize_up(AdapterSet& set, Rng& rng) {
  for (auto& m : set.modules()) {
    if (m.adapter) {
      for (auto& v : m.adapter->up().weight.mutable_data()) v = rng.normal(0.0, 0.3);
    }
    if (m.lora) {
      for (auto& v : m.lora->b().weight.mutable_data()) v = rng.normal(0.0, 0.3);
    }
  }
}

}  // namespace

TEST_CASE("default config has 17 tokens and the documented shapes") {
  BackboneConfig cfg;
  cfg.channels = 3;
  CHECK(cfg.num_tokens() == 17);
  Rng rng(0);
  FrozenModel model = build_backbone(cfg, rng);
  auto out = forward(model, images(cfg, 2, 1), AdapterSet{});
  CHECK(out.logits.shape() == Shape{2, 10});
  REQUIRE(out.features.size() == 4);
  for (const auto& f : out.features) CHECK(f.shape() == Shape{2 * 17, 64});
  CHECK(out.pooled.shape() == Shape{2, 64});
}

TEST_CASE("config errors name the violated constraint") {
  auto message = [](BackboneConfig cfg) -> std::string {
    try {
      cfg.validate();
    } catch (const ConfigError& e) {
      return e.what();
    }
    return {};
  };
  BackboneConfig cfg;
  cfg.image_size = 15;
  CHECK(message(cfg).find("patch_size") != std::string::npos);
  cfg = {};
  cfg.num_heads = 5;
  CHECK(message(cfg).find("num_heads") != std::string::npos);
  cfg = {};
  cfg.num_layers = 1;
  CHECK(message(cfg).find("num_layers") != std::string::npos);
  Rng rng(0);
  CHECK_THROWS_AS(build_backbone(cfg, rng), ConfigError);
}

TEST_CASE("parameters are frozen except the head") {
  Rng rng(3);
  FrozenModel model = build_backbone(tiny(), rng);
  for (const auto& p : model.parameters()) {
    CAPTURE(p.name);
    CHECK(p.trainable == FrozenModel::is_head(p.name));
    CHECK(p.tensor.requires_grad() == p.trainable);
  }
  model.unfreeze_biases();
  CHECK(model.trainable().size() > 2);
  for (const auto& p : model.trainable()) {
    CHECK((FrozenModel::is_head(p.name) || p.name.ends_with(".bias")));
  }
}

TEST_CASE("image and adapter dimension errors") {
  Rng rng(3);
  FrozenModel model = build_backbone(tiny(), rng);
  CHECK_THROWS_AS(forward(model, Tensor::zeros({1, 2, 8, 4}), AdapterSet{}), DimensionError);
  AdapterConfig acfg;
  acfg.bottleneck_dim = 2;
  AdapterSet wrong = AdapterSet::build(16, 2, acfg, Rng(1));
  CHECK_THROWS_AS(forward(model, images(tiny(), 1, 0), wrong), ConfigError);
}

TEST_CASE("zero up-projections reproduce the unadapted logits exactly") {
  Rng rng(4);
  const BackboneConfig cfg = tiny();
  FrozenModel model = build_backbone(cfg, rng);
  const Tensor x = images(cfg, 3, 2);
  const auto plain = values(forward(model, x, AdapterSet{}).logits);
  for (auto insertion : {Insertion::kParallelFfn, Insertion::kPfeiffer, Insertion::kHoulsby}) {
    AdapterConfig acfg;
    acfg.insertion = insertion;
    acfg.bottleneck_dim = 4;
    acfg.num_experts = 2;
    AdapterSet set = AdapterSet::build(cfg.embed_dim, cfg.num_layers, acfg, Rng(5));
    CHECK(values(forward(model, x, set).logits) == plain);
    CHECK(values(forward(model, x, set, set.uniform_routing(1)).logits) == plain);
  }
  AdapterConfig lcfg;
  lcfg.kind = AdapterKind::kLora;
  lcfg.bottleneck_dim = 2;
  AdapterSet lora = AdapterSet::build(cfg.embed_dim, cfg.num_layers, lcfg, Rng(5));
  CHECK(values(forward(model, x, lora).logits) == plain);
}

TEST_CASE("insertion styles stay finite with nonzero adapters") {
  Rng rng(4);
  const BackboneConfig cfg = tiny();
  FrozenModel model = build_backbone(cfg, rng);
  const Tensor x = images(cfg, 2, 2);
  const auto plain = values(forward(model, x, AdapterSet{}).logits);
  for (auto insertion : {Insertion::kParallelFfn, Insertion::kPfeiffer, Insertion::kHoulsby}) {
    AdapterConfig acfg;
    acfg.insertion = insertion;
    AdapterSet set = AdapterSet::build(cfg.embed_dim, cfg.num_layers, acfg, Rng(5));
    Rng w(6);
    randomize_up(set, w);
    const auto adapted = values(forward(model, x, set).logits);
    for (double v : adapted) CHECK(std::isfinite(v));
    CHECK(adapted != plain);
  }
}

TEST_CASE("no adapters equals a linear probe on pooled features") {
  Rng rng(8);
  const BackboneConfig cfg = tiny();
  FrozenModel model = build_backbone(cfg, rng);
  auto out = forward(model, images(cfg, 4, 3), AdapterSet{});
  Tensor probe = add_bias(matmul(out.pooled, model.get("head.weight")), model.get("head.bias"));
  CHECK(values(out.logits) == values(probe));

  BackboneConfig mean_pool = cfg;
  mean_pool.use_cls_token = false;
  Rng rng2(8);
  FrozenModel model2 = build_backbone(mean_pool, rng2);
  auto out2 = forward(model2, images(mean_pool, 4, 3), AdapterSet{});
  CHECK(out2.features[0].shape() == Shape{4 * 4, 8});
  Tensor pooled = mean_tokens(
      layer_norm(out2.features.back(), model2.get("norm.weight"), model2.get("norm.bias")), 4, 4);
  CHECK(values(out2.pooled) == values(pooled));
}

TEST_CASE("CE gradient with respect to adapter weights matches finite differences") {
  Rng rng(11);
  const BackboneConfig cfg = tiny();
  FrozenModel model = build_backbone(cfg, rng);
  for (auto insertion : {Insertion::kParallelFfn, Insertion::kHoulsby}) {
    AdapterConfig acfg;
    acfg.insertion = insertion;
    acfg.bottleneck_dim = 3;
    acfg.num_experts = 2;
    acfg.activation = Activation::kGelu;
    AdapterSet set = AdapterSet::build(cfg.embed_dim, cfg.num_layers, acfg, Rng(2));
    Rng w(3);
    randomize_up(set, w);
    std::vector<Tensor> params;
    for (const auto& p : set.parameters()) params.push_back(p.tensor);
    const Tensor x = images(cfg, 2, 5);
    const std::vector<std::size_t> y{0, 2};
    const Routing routing = set.uniform_routing(1);
    auto r = oracle::check_gradients(
        [&] { return cross_entropy(forward(model, x, set, routing).logits, y); }, params);
    CHECK_MESSAGE(r.ok(), r.worst);
    CHECK(grad_check([&] { return cross_entropy(forward(model, x, set, routing).logits, y); },
                     params)
              .passed);
  }
}

TEST_CASE("backbone bytes survive optimizer steps") {
  Rng rng(12);
  const BackboneConfig cfg = tiny();
  FrozenModel model = build_backbone(cfg, rng);
  AdapterConfig acfg;
  acfg.bottleneck_dim = 2;
  AdapterSet set = AdapterSet::build(cfg.embed_dim, cfg.num_layers, acfg, Rng(2));
  const auto before = model.backbone_bytes();
  OptimizerState state;
  const Tensor x = images(cfg, 2, 5);
  const std::vector<std::size_t> y{1, 2};
  for (int step = 0; step < 10; ++step) {
    Tensor loss = cross_entropy(forward(model, x, set).logits, y);
    loss.backward();
    std::vector<MaskedParam> params;
    for (const auto& p : set.parameters()) params.push_back({p.name, p.tensor, nullptr});
    for (const auto& p : model.trainable()) params.push_back({p.name, p.tensor, nullptr});
    masked_step(params, state, 0.01, AdamWConfig{});
    for (auto& p : params) p.tensor.zero_grad();
  }
  CHECK(model.backbone_bytes() == before);
  for (const auto& p : model.parameters()) {
    if (!p.trainable) CHECK_FALSE(p.tensor.has_grad());
  }
}
