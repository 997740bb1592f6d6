// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "tabloid/bpe.hpp"
#include "tabloid/synth.hpp"

namespace {

using namespace tabloid;

const std::vector<ArticleRecord>& corpus() {
  static const auto articles = [] {
    SynthConfig cfg;
    cfg.n_articles = 400;
    cfg.seed = 11;
    return synth_corpus(cfg);
  }();
  return articles;
}

const Vocab& vocab() {
  static const Vocab v = [] {
    std::vector<std::string> texts;
    for (const auto& a : corpus()) texts.push_back(a.body);
    return train_bpe(texts, 512);
  }();
  return v;
}

void BM_BpeTrain(benchmark::State& state) {
  std::vector<std::string> texts;
  for (const auto& a : corpus()) texts.push_back(a.body);
  for (auto _ : state) {
    Vocab v = train_bpe(texts, static_cast<int>(state.range(0)));
    benchmark::DoNotOptimize(v.size());
  }
}
BENCHMARK(BM_BpeTrain)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_BpeEncodeBody(benchmark::State& state) {
  const Vocab& v = vocab();
  size_t i = 0, bytes = 0;
  for (auto _ : state) {
    const auto& body = corpus()[i++ % corpus().size()].body;
    auto ids = v.encode(body);
    benchmark::DoNotOptimize(ids.size());
    bytes += body.size();
  }
  state.SetBytesProcessed(static_cast<int64_t>(bytes));
}
BENCHMARK(BM_BpeEncodeBody);

}  // namespace
