#include <benchmark/benchmark.h>

#include <cmath>
#include <random>
#include <vector>

#include "idlora/idlora.hpp"

namespace {

using namespace idlora;

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = scale * unit(rng);
  return m;
}

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = unit(rng);
  return v;
}

void bm_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, n, 1);
  const Matrix b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * int64_t(2) * n * n * n);
}
BENCHMARK(bm_matmul)->Arg(64)->Arg(128)->Arg(256);

void bm_truncated_svd(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, n, 3);
  for (auto _ : state) benchmark::DoNotOptimize(truncated_svd(a, 8));
}
BENCHMARK(bm_truncated_svd)->Arg(64)->Arg(128);

void bm_constrained_kmeans(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Matrix points(n, 16);
  const Matrix centers = random_matrix(4, 16, 4, 4.0);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto center = centers.row(i % 4);
    auto dst = points.row(i);
    for (std::size_t j = 0; j < 16; ++j) dst[j] = center[j] + 0.3 * unit(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(constrained_kmeans(points, 4, 8, 1));
}
BENCHMARK(bm_constrained_kmeans)->Arg(128)->Arg(512);

void bm_lora_forward(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  Adapter adapter = build_lora(random_matrix(d, d, 6, 1.0 / std::sqrt(double(d))), 16, 32.0, 1);
  randomize_trainable(adapter, 2);
  const LoraLayer& layer = std::get<LoraLayer>(adapter);
  const std::vector<double> h = random_vector(d, 7);
  for (auto _ : state) benchmark::DoNotOptimize(lora_forward(layer, h));
}
BENCHMARK(bm_lora_forward)->Arg(256)->Arg(1024);

void bm_moelora_forward(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  Adapter adapter =
      build_moelora(random_matrix(d, d, 8, 1.0 / std::sqrt(double(d))), 16, 4, 32.0, 1);
  randomize_trainable(adapter, 2);
  const MoeLoraLayer& layer = std::get<MoeLoraLayer>(adapter);
  const std::vector<double> h = random_vector(d, 9);
  for (auto _ : state) benchmark::DoNotOptimize(moelora_forward(layer, h));
}
BENCHMARK(bm_moelora_forward)->Arg(256)->Arg(1024);

void bm_idlora_forward(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  Adapter adapter =
      build_idlora(random_matrix(d, d, 10, 1.0 / std::sqrt(double(d))), 16, 4, 2, 32.0, 1);
  randomize_trainable(adapter, 2);
  const IdLoraLayer& layer = std::get<IdLoraLayer>(adapter);
  const std::vector<double> h = random_vector(d, 11);
  for (auto _ : state) benchmark::DoNotOptimize(idlora_forward(layer, h));
}
BENCHMARK(bm_idlora_forward)->Arg(256)->Arg(512);

void bm_cur_decompose(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix w = random_matrix(n, n, 12);
  const PivotSet rows = sample_pivots_uniform(n, 16, 1, PivotAxis::rows);
  const PivotSet cols = sample_pivots_uniform(n, 16, 2, PivotAxis::cols);
  for (auto _ : state) benchmark::DoNotOptimize(cur_decompose(w, rows, cols));
}
BENCHMARK(bm_cur_decompose)->Arg(64)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
