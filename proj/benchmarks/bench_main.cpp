#include "cubeflow/basic_map.hpp"
#include "cubeflow/geometry.hpp"
#include "cubeflow/moser.hpp"
#include "cubeflow/verify.hpp"

#include <benchmark/benchmark.h>

using namespace cubeflow;

static void BM_GenerationMeasure(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(geometry::generation_measure(k, 3));
}
BENCHMARK(BM_GenerationMeasure)->Arg(5)->Arg(20);

// tower evaluation at sampled points, forward and inverse
static void BM_TowerEval(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const int depth = static_cast<int>(state.range(1));
  auto tower = basic_map::build_tower(n, depth, true);
  tower->eval(constant_point(n, 0.5), depth);  // build every stage outside the loop
  verify::Sampler s(n, 1);
  for (auto _ : state) {
    auto r = tower->eval(s.next(), depth);
    benchmark::DoNotOptimize(tower->eval_inverse(r.value, depth));
  }
}
BENCHMARK(BM_TowerEval)->Args({2, 6})->Args({2, 12})->Args({3, 6});

static void BM_MoserSolve(benchmark::State& state) {
  const auto p = moser::benchmark_problem(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(moser::prescribe_jacobian(p, 0.0));
}
BENCHMARK(BM_MoserSolve)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);
