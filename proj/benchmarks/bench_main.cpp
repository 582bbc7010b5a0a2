#include <benchmark/benchmark.h>

#include <random>

#include "trajmine/evaluation.hpp"
#include "trajmine/flow.hpp"
#include "trajmine/scene_features.hpp"
#include "trajmine/synthgen.hpp"
#include "trajmine/training.hpp"

namespace {

using namespace trajmine;

Matrix gaussian_rows(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(rows, cols);
  for (auto& x : m.values) x = g(rng);
  return m;
}

FlowModel initialized(std::size_t dim) {
  FlowModel m(dim, FlowConfig{});
  init_parameters(m, 1);
  return m;
}

void BM_FlowLogProb(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  const auto model = initialized(dim);
  const auto rows = gaussian_rows(256, dim, 2);
  for (auto _ : state) benchmark::DoNotOptimize(log_prob_rows(model, rows));
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_FlowLogProb)->Arg(78)->Arg(130)->Unit(benchmark::kMillisecond);

void BM_FlowGradient(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  const auto model = initialized(dim);
  const auto batch = gaussian_rows(256, dim, 3);
  for (auto _ : state) benchmark::DoNotOptimize(grad_nll(model, batch));
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_FlowGradient)->Arg(78)->Arg(130)->Unit(benchmark::kMillisecond);

void BM_FeatureExtraction(benchmark::State& state) {
  const auto data = gen_dataset(50, 0.1, 4);
  const auto targets = data.target_ids();
  const auto examples = window_examples(data.tracks, 50, targets);
  const SceneIndex scene(data.tracks);
  const auto scheme = PartitionScheme::parse("fixsegnum:5");
  const auto scope = state.range(0) == 0 ? Scope::X : Scope::Z;
  for (auto _ : state) {
    for (const auto& ex : examples) benchmark::DoNotOptimize(extract_feature_vector(ex, scope, scheme, scene));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(examples.size()));
}
BENCHMARK(BM_FeatureExtraction)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);

void BM_KalmanPredict(benchmark::State& state) {
  std::vector<Position> history(30);
  for (std::size_t k = 0; k < history.size(); ++k) history[k] = {5.4, 0.8 * static_cast<double>(k)};
  const KalmanConfig config;
  for (auto _ : state) benchmark::DoNotOptimize(kalman_cv_predict(history, 50, config));
}
BENCHMARK(BM_KalmanPredict);

}  // namespace

BENCHMARK_MAIN();
