// Kernel throughput. Run with --benchmark_filter=... to pick a subset.

#include <benchmark/benchmark.h>

#include <random>

#include "fcc/analysis.hpp"
#include "fcc/correlation.hpp"
#include "fcc/parallel.hpp"
#include "fcc/reduction.hpp"
#include "fcc/segmentation.hpp"

namespace {

fcc::FeatureSet features(std::size_t n, std::size_t c, std::size_t grid, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal;
  std::vector<float> data(n * c * grid * grid);
  for (float& v : data) v = normal(rng);
  return fcc::FeatureSet(n, c, grid, grid, std::move(data));
}

// args: layers, channels, grid
void BM_FullyCross(benchmark::State& state) {
  const auto n = std::size_t(state.range(0)), c = std::size_t(state.range(1)), g = std::size_t(state.range(2));
  const auto side = features(n, c, g, 1), query = features(n, c, g, 2);
  for (auto _ : state) benchmark::DoNotOptimize(fcc::fcc(side, query).data.data());
  state.SetItemsProcessed(std::int64_t(state.iterations() * n * n * g * g * g * g));
}
BENCHMARK(BM_FullyCross)->Args({12, 64, 8})->Args({12, 768, 8})->Args({12, 64, 16})->Unit(benchmark::kMillisecond);

void BM_SameLayer(benchmark::State& state) {
  const auto n = std::size_t(state.range(0)), c = std::size_t(state.range(1)), g = std::size_t(state.range(2));
  const auto side = features(n, c, g, 1), query = features(n, c, g, 2);
  const auto pattern = fcc::LayerPattern::same_layer();
  for (auto _ : state) benchmark::DoNotOptimize(fcc::fcc_subset(side, query, pattern).data.data());
}
BENCHMARK(BM_SameLayer)->Args({12, 768, 8})->Unit(benchmark::kMillisecond);

void BM_Reduce(benchmark::State& state) {
  const auto g = std::size_t(state.range(0));
  const auto a = features(12, 16, g, 1), b = features(12, 16, g, 2);
  const auto volume = fcc::dcfc_concat(fcc::fcc(a, b), fcc::fcc(b, a, fcc::CorrelationPath::support));
  const auto w = fcc::ReductionWeights::init(288, 72, 0);
  for (auto _ : state) benchmark::DoNotOptimize(fcc::reduce(volume.view(), w).data.data());
}
BENCHMARK(BM_Reduce)->Arg(8)->Arg(12)->Unit(benchmark::kMillisecond);

void BM_FusedReduce(benchmark::State& state) {
  const auto g = std::size_t(state.range(0));
  const auto t = features(12, 64, g, 1), s = features(12, 64, g, 2), q = features(12, 64, g, 3);
  const auto w = fcc::ReductionWeights::init(288, 72, 0);
  for (auto _ : state) benchmark::DoNotOptimize(fcc::fused_fcc_reduce(t, s, q, w).data.data());
}
BENCHMARK(BM_FusedReduce)->Arg(8)->Arg(12)->Unit(benchmark::kMillisecond);

void BM_PriorScore(benchmark::State& state) {
  const auto g = std::size_t(state.range(0));
  const auto volume = fcc::fcc(features(12, 16, g, 1), features(12, 16, g, 2));
  std::vector<std::uint8_t> cells(g * g, 0);
  for (std::size_t i = 0; i < cells.size(); i += 3) cells[i] = 1;
  const fcc::GridMask mask(g, g, cells);
  for (auto _ : state) benchmark::DoNotOptimize(fcc::prior_score(volume.view(), mask).values.data());
}
BENCHMARK(BM_PriorScore)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_CkaHeatmap(benchmark::State& state) {
  const auto c = std::size_t(state.range(0));
  const auto a = features(12, c, 12, 1), b = features(12, c, 12, 2);
  for (auto _ : state) benchmark::DoNotOptimize(fcc::cka_heatmap(a, b).values.data());
}
BENCHMARK(BM_CkaHeatmap)->Arg(64)->Arg(768)->Unit(benchmark::kMillisecond);

void BM_Threads(benchmark::State& state) {
  fcc::set_num_threads(unsigned(state.range(0)));
  const auto side = features(12, 256, 8, 1), query = features(12, 256, 8, 2);
  for (auto _ : state) benchmark::DoNotOptimize(fcc::fcc(side, query).data.data());
  fcc::set_num_threads(fcc::default_num_threads());
}
BENCHMARK(BM_Threads)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
