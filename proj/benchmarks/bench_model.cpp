// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "tabloid/decoder.hpp"
#include "tabloid/model.hpp"
#include "tabloid/rng.hpp"

namespace {

using namespace tabloid;

std::vector<int> random_ids(int n, int vocab, uint64_t seed) {
  Rng rng(seed);
  std::vector<int> ids(n);
  for (auto& t : ids) t = static_cast<int>(rng.uniform_int(vocab));
  return ids;
}

template <class T>
void BM_ForwardBackward(benchmark::State& state) {
  int seq = static_cast<int>(state.range(0));
  ModelConfig cfg = ModelConfig::from_preset("toy-base", 512);
  TransformerLM<T> model(cfg);
  model.init(1);
  Acts<T> acts;
  Tensor<T> dlogits;
  auto ids = random_ids(seq, cfg.vocab_size, 7);
  std::vector<int> targets(seq, 1);
  std::vector<uint8_t> mask(seq, 1);
  mask.back() = 0;
  for (auto _ : state) {
    model.zero_grad();
    model.forward(ids, acts);
    lm_loss_and_grad(acts.logits, targets, mask, 1.0, dlogits);
    model.backward(acts, dlogits);
  }
  state.SetItemsProcessed(state.iterations() * seq);
}
BENCHMARK(BM_ForwardBackward<float>)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ForwardBackward<double>)->Arg(256)->Unit(benchmark::kMillisecond);

template <class T>
void BM_DecodeStep(benchmark::State& state) {
  ModelConfig cfg = ModelConfig::from_preset("toy-base", 512);
  TransformerLM<T> model(cfg);
  model.init(1);
  Decoder<T> dec(model);
  Rng rng(3);
  for (auto _ : state) {
    if (dec.pos() == dec.capacity()) dec.reset();
    dec.step(static_cast<int>(rng.uniform_int(cfg.vocab_size)));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_DecodeStep<float>)->Unit(benchmark::kMicrosecond);

}  // namespace
