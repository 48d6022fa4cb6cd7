// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "mosa/experiment.hpp"
#include "mosa/inference.hpp"
#include "mosa/ops.hpp"
#include "mosa/training.hpp"

using namespace mosa;

namespace {

Tensor random(Shape shape, std::uint64_t seed, bool requires_grad = false) {
  Rng rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, 1.0);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random({n, n}, 1);
  const Tensor b = random({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128)->Arg(256);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Tensor a = random({n, n}, 1, true);
  Tensor b = random({n, n}, 2, true);
  for (auto _ : state) {
    sum(matmul(a, b)).backward();
    a.zero_grad();
    b.zero_grad();
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(64)->Arg(128);

void BM_AdapterBranch(benchmark::State& state) {
  const auto experts = static_cast<std::size_t>(state.range(0));
  const bool single = state.range(1) != 0;
  AdapterConfig cfg;
  cfg.bottleneck_dim = 16;
  cfg.num_experts = experts;
  AdapterSet set = AdapterSet::build(192, 1, cfg, Rng(3));
  const SparseExpertAdapter& a = *set.modules()[0].adapter;
  const Tensor x = random({17 * 32, 192}, 4);
  const ExpertChoice choice = single ? ExpertChoice{std::nullopt, 0} : ExpertChoice{};
  for (auto _ : state) benchmark::DoNotOptimize(a.branch(x, choice));
}
BENCHMARK(BM_AdapterBranch)->Args({1, 0})->Args({4, 0})->Args({4, 1});

RunConfig desk_config(std::size_t experts) {
  RunConfig cfg;
  cfg.adapter.num_experts = experts;
  cfg.plan.epochs = 1;
  cfg.plan.warmup_epochs = 0;
  cfg.plan.batch_size = 32;
  return cfg;
}

void BM_Forward(benchmark::State& state) {
  const RunConfig cfg = desk_config(static_cast<std::size_t>(state.range(0)));
  const Experiment exp = make_experiment(cfg);
  const Tensor images =
      random({32, cfg.backbone.channels, cfg.backbone.image_size, cfg.backbone.image_size}, 5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(infer(exp.model, exp.adapters, images, InferenceMode{}));
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_TrainEpoch(benchmark::State& state) {
  const RunConfig cfg = desk_config(static_cast<std::size_t>(state.range(0)));
  SyntheticSpec spec;
  spec.samples_per_class = 4;
  spec.val_per_class = 1;
  const Dataset data = gen_synthetic(spec).train;
  for (auto _ : state) {
    state.PauseTiming();
    Experiment exp = make_experiment(cfg);
    state.ResumeTiming();
    benchmark::DoNotOptimize(train(exp.model, exp.adapters, data, nullptr, cfg.plan));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(data.size()));
}
BENCHMARK(BM_TrainEpoch)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
