// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "tabloid/rng.hpp"
#include "tabloid/sampler.hpp"

namespace {

using namespace tabloid;

std::vector<double> random_dist(int v, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> p(v);
  double sum = 0;
  for (auto& x : p) {
    x = -std::log(1.0 - rng.uniform01());
    sum += x;
  }
  for (auto& x : p) x /= sum;
  return p;
}

void BM_NucleusFilter(benchmark::State& state) {
  auto dist = random_dist(static_cast<int>(state.range(0)), 5);
  for (auto _ : state) {
    auto kept = nucleus_filter(dist, 0.96);
    benchmark::DoNotOptimize(kept.ids.size());
  }
}
BENCHMARK(BM_NucleusFilter)->Arg(512)->Arg(4096);

void BM_SampleToken(benchmark::State& state) {
  auto dist = random_dist(512, 5);
  auto kept = nucleus_filter(dist, 0.96);
  Rng rng(9);
  for (auto _ : state) benchmark::DoNotOptimize(sample_token(rng, kept));
}
BENCHMARK(BM_SampleToken);

}  // namespace
