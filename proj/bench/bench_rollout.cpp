// Serial reference vs OpenMP group sampling, plus the Monte-Carlo estimators
// built on top of it.

#include <benchmark/benchmark.h>
#include <omp.h>

#include "guidelab/analysis.hpp"
#include "guidelab/env.hpp"
#include "guidelab/rollout.hpp"

namespace {

using namespace guidelab;

const BarrierChain& chain() {
  static const BarrierChain c = make_barrier_chain(12, 8, 6, {{4, 4}});
  return c;
}

void BM_SampleGroupSerial(benchmark::State& state) {
  const auto params = uniform_policy(12, 8);
  const auto g = level(ReferenceTrajectory{chain().canonical}, 6);
  std::uint64_t seed = 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(sample_group_serial(chain().spec, params, g, static_cast<int>(state.range(0)), ++seed));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_SampleGroupParallel(benchmark::State& state) {
  const auto params = uniform_policy(12, 8);
  const auto g = level(ReferenceTrajectory{chain().canonical}, 6);
  std::uint64_t seed = 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(sample_group(chain().spec, params, g, static_cast<int>(state.range(0)), ++seed));
  state.SetItemsProcessed(state.iterations() * state.range(0));
  state.counters["threads"] = omp_get_max_threads();
}

void BM_EstimateQ(benchmark::State& state) {
  const auto params = uniform_policy(12, 8);
  const auto g = level(ReferenceTrajectory{chain().canonical}, 8);
  std::uint64_t seed = 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(estimate_q(chain().spec, params, g, 8, 0.5, static_cast<int>(state.range(0)), ++seed));
}

void BM_PassAtK(benchmark::State& state) {
  const auto params = uniform_policy(12, 8);
  std::uint64_t seed = 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(empirical_pass_at_k(chain().spec, params, {4, true}, 32, static_cast<int>(state.range(0)), ++seed));
}

}  // namespace

BENCHMARK(BM_SampleGroupSerial)->Arg(8)->Arg(64)->Arg(1024);
BENCHMARK(BM_SampleGroupParallel)->Arg(8)->Arg(64)->Arg(1024);
BENCHMARK(BM_EstimateQ)->Arg(295);
BENCHMARK(BM_PassAtK)->Arg(2000);

BENCHMARK_MAIN();
