#include <benchmark/benchmark.h>

#include "actdiff/denoiser.hpp"
#include "actdiff/noise.hpp"
#include "actdiff/ops.hpp"
#include "actdiff/planner.hpp"
#include "actdiff/rng.hpp"

using namespace actdiff;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, bool grad = false) {
  Rng rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal();
  return Tensor::from_data(std::move(shape), std::move(v), grad);
}

DenoiserConfig default_arch() {
  DenoiserConfig cfg;
  cfg.input_width = 5 + 20 + 32;
  cfg.horizon = 3;
  return cfg;
}

void BM_Conv1d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  auto x = random_tensor({64, 3, c}, 1), w = random_tensor({c, 3, c}, 2, true), b = random_tensor({c}, 3, true);
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv1d(x, w, b).data().data());
  state.SetItemsProcessed(state.iterations() * 64 * 3 * 3 * static_cast<std::int64_t>(c * c));
}
BENCHMARK(BM_Conv1d)->Arg(64)->Arg(128)->Arg(256);

void BM_DenoiserForward(benchmark::State& state) {
  Denoiser d(default_arch());
  const auto batch = static_cast<std::size_t>(state.range(0));
  auto x = random_tensor({batch, 3, 57}, 4);
  std::vector<std::size_t> steps(batch, 100);
  for (auto _ : state) benchmark::DoNotOptimize(d.forward(x, steps).data().data());
}
BENCHMARK(BM_DenoiserForward)->Arg(1)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_DenoiserTrainStep(benchmark::State& state) {
  Denoiser d(default_arch());
  auto x = random_tensor({64, 3, 57}, 4), target = random_tensor({64, 3, 57}, 5);
  std::vector<std::size_t> steps(64, 100);
  for (auto _ : state) {
    d.parameters().zero_grad();
    backward(ops::mse(d.forward(x, steps), target));
  }
}
BENCHMARK(BM_DenoiserTrainStep)->Unit(benchmark::kMillisecond);

void BM_QSample(benchmark::State& state) {
  ProblemDims dims{3, 20, 5, 32};
  NoiseSchedule s(200);
  const std::size_t actions[] = {3, 4, 5};
  std::vector<double> os(32, 0.1), og(32, -0.1);
  auto x0 = assemble_x0(1, actions, os, og, dims);
  ActionEmbeddingTable raw{20, 20, std::vector<double>(400)};
  Rng rng(1);
  for (auto& v : raw.values) v = rng.normal();
  auto mask = build_mask(actions, normalize_embeddings(raw), MaskMode::MultiAdd);
  for (auto _ : state) benchmark::DoNotOptimize(q_sample(x0, 150, s, mask, rng).values().data());
}
BENCHMARK(BM_QSample);

}  // namespace
BENCHMARK_MAIN();
