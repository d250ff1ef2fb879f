#include <benchmark/benchmark.h>
static void bench_noop(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(0);
}
BENCHMARK(bench_noop);
BENCHMARK_MAIN();
