#include <benchmark/benchmark.h>

#include <vector>

#include "trajdiff/diffusion.hpp"
#include "trajdiff/rng.hpp"
#include "trajdiff/traj_unet.hpp"

using namespace trajdiff;

namespace {

Tensor noise(Shape shape, std::uint64_t seed) {
  RngStream rng(seed, 0);
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return Tensor::from(std::move(shape), std::move(v));
}

std::vector<ConditionVector> conditions(std::size_t n) {
  std::vector<ConditionVector> c(n);
  for (std::size_t i = 0; i < n; ++i) {
    c[i].departure_slot = static_cast<int>(i % kDepartureSlots);
    c[i].origin_cell = static_cast<int>(i % 256);
    c[i].destination_cell = static_cast<int>((7 * i) % 256);
  }
  return c;
}

void BM_Conv1d(benchmark::State& state) {
  const auto C = static_cast<std::size_t>(state.range(0));
  const Tensor x = noise({64, C, 64}, 1);
  const Tensor w = noise({C, C, 3}, 2);
  const Tensor b = noise({C}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv1d(x, w, b));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_Conv1d)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_UNetForward(benchmark::State& state) {
  const auto B = static_cast<std::size_t>(state.range(0));
  TrajUNet model(TrajUNetConfig::desk(), 1);
  const Tensor x = noise({B, 2, 64}, 4);
  const std::vector<int> steps(B, 50);
  const auto conds = conditions(B);
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(x, steps, conds));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(B));
}
BENCHMARK(BM_UNetForward)->Arg(1)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  TrajUNet model(TrajUNetConfig::desk(), 1);
  const auto sched = NoiseSchedule::linear(100, 5e-4, 0.25);
  TrainingSet data{noise({64, 2, 64}, 5), conditions(64)};
  TrainConfig tc;
  tc.steps = 1;
  for (auto _ : state) benchmark::DoNotOptimize(train(model, data, tc, sched));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_SkipStepSampling(benchmark::State& state) {
  TrajUNet model(TrajUNetConfig::desk(), 1);
  const auto sched = NoiseSchedule::linear(100, 5e-4, 0.25);
  const auto conds = conditions(64);
  SamplerConfig sc;
  sc.sample_steps = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(sample(model, conds, sc, sched, 64));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_SkipStepSampling)->Arg(20)->Arg(100)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
