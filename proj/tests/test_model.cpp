// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "tabloid/bpe.hpp"
#include "tabloid/decoder.hpp"
#include "tabloid/model.hpp"
#include "tabloid/rng.hpp"

using namespace tabloid;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.vocab_size = 20;
  c.max_seq = 16;
  c.preset = "tiny-test";
  return c;
}

std::vector<int> random_ids(const ModelConfig& c, int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<int> ids(n);
  for (auto& t : ids) t = static_cast<int>(rng.uniform_int(c.vocab_size));
  return ids;
}

/// Combined training loss: next-token CE (random targets, random mask)
/// plus detection CE. Exercises every parameter including the heads.
struct LossProbe {
  std::vector<int> ids, targets;
  std::vector<uint8_t> mask;
  int label = 1;

  explicit LossProbe(const ModelConfig& c, uint64_t seed) {
    Rng rng(seed);
    int n = 12;
    ids = random_ids(c, n, seed);
    ids.back() = kCls;
    targets.assign(n, 0);
    mask.assign(n, 0);
    for (int i = 0; i + 1 < n; ++i) {
      targets[i] = static_cast<int>(rng.uniform_int(c.vocab_size));
      mask[i] = rng.bernoulli(0.7) ? 1 : 0;
    }
    mask[2] = 1;  // guarantee a nonempty mask
  }

  double loss(TransformerLM<double>& m, Acts<double>& acts) const {
    m.forward(ids, acts);
    double lm = lm_loss(acts.logits, targets, mask);
    auto dl = m.detect_logits(acts);
    double mx = std::max(dl[0], dl[1]);
    double lse = mx + std::log(std::exp(dl[0] - mx) + std::exp(dl[1] - mx));
    return lm + (lse - dl[label]);
  }

  void backward(TransformerLM<double>& m, Acts<double>& acts) const {
    m.forward(ids, acts);
    Tensor<double> dlogits;
    lm_loss_and_grad(acts.logits, targets, mask, 1.0, dlogits);
    auto dl = m.detect_logits(acts);
    double mx = std::max(dl[0], dl[1]);
    double z0 = std::exp(dl[0] - mx), z1 = std::exp(dl[1] - mx);
    double p0 = z0 / (z0 + z1), p1 = z1 / (z0 + z1);
    std::array<double, 2> dcls{p0 - (label == 0), p1 - (label == 1)};
    m.backward(acts, dlogits, &dcls);
  }
};

}  // namespace

TEST_CASE("forward shapes and determinism") {
  ModelConfig c = tiny_config();
  TransformerLM<double> m(c);
  m.init(7);
  Acts<double> acts;
  auto& logits = m.forward(std::vector<int>{3}, acts);
  CHECK(logits.shape == std::vector<int>{1, c.vocab_size});

  auto ids = random_ids(c, 10, 3);
  m.forward(ids, acts);
  auto first = acts.logits.v;
  m.forward(ids, acts);
  CHECK(acts.logits.v == first);

  CHECK_THROWS_AS(m.forward(std::vector<int>{}, acts), std::invalid_argument);
  CHECK_THROWS_AS(m.forward(random_ids(c, c.max_seq + 1, 1), acts), std::invalid_argument);
  CHECK_THROWS_AS(m.forward(std::vector<int>{c.vocab_size}, acts), std::invalid_argument);
}

TEST_CASE("causality: perturbing position j leaves logits before j unchanged") {
  ModelConfig c = tiny_config();
  TransformerLM<double> m(c);
  m.init(11);
  Acts<double> acts;
  Rng rng(5);
  auto ids = random_ids(c, 12, 9);
  m.forward(ids, acts);
  auto base = acts.logits.v;
  for (int trial = 0; trial < 20; ++trial) {
    auto perturbed = ids;
    int j = 1 + static_cast<int>(rng.uniform_int(11));
    perturbed[j] = static_cast<int>(rng.uniform_int(c.vocab_size));
    m.forward(perturbed, acts);
    for (int i = 0; i < j; ++i)
      for (int v = 0; v < c.vocab_size; ++v)
        CHECK(acts.logits.v[i * c.vocab_size + v] == base[i * c.vocab_size + v]);
  }
}

TEST_CASE("zero weights with a uniform output bias reproduce the bias in every row") {
  ModelConfig c = tiny_config();
  TransformerLM<double> m(c);  // all parameters start at zero
  Tensor<double>& b = m.tensor("lm_head.b");
  for (int v = 0; v < c.vocab_size; ++v) b.v[v] = 0.25 * v;
  Acts<double> acts;
  m.forward(random_ids(c, 6, 2), acts);
  for (int i = 0; i < 6; ++i)
    for (int v = 0; v < c.vocab_size; ++v)
      CHECK(acts.logits.v[i * c.vocab_size + v] == doctest::Approx(0.25 * v).epsilon(1e-12));
}

TEST_CASE("lm_loss analytic values") {
  Tensor<double> logits({4, 8});  // all-zero rows = uniform distribution
  std::vector<int> targets{1, 2, 3, 4};
  std::vector<uint8_t> mask{1, 1, 1, 1};
  CHECK(lm_loss(logits, targets, mask) == doctest::Approx(std::log(8.0)).epsilon(1e-12));

  // one-hot correct logits with growing margin drive the loss to zero
  double prev = 1e9;
  for (double margin : {2.0, 5.0, 10.0, 30.0}) {
    Tensor<double> l({1, 8});
    l.v[3] = margin;
    std::vector<int> t{3};
    std::vector<uint8_t> ms{1};
    double loss = lm_loss(l, t, ms);
    CHECK(loss < prev);
    prev = loss;
  }
  CHECK(prev < 1e-8);

  CHECK_THROWS_AS(lm_loss(logits, targets, std::vector<uint8_t>{0, 0, 0, 0}),
                  std::invalid_argument);
}

TEST_CASE("masked lm_loss equals the mean of per-position NLL over the masked half") {
  ModelConfig c = tiny_config();
  TransformerLM<double> m(c);
  m.init(21);
  Acts<double> acts;
  auto ids = random_ids(c, 8, 13);
  m.forward(ids, acts);
  std::vector<int> targets = random_ids(c, 8, 14);
  std::vector<uint8_t> mask{1, 0, 1, 0, 1, 0, 1, 0};
  auto per_pos = nll_per_position(acts.logits, targets);
  double expect = (per_pos[0] + per_pos[2] + per_pos[4] + per_pos[6]) / 4.0;
  CHECK(lm_loss(acts.logits, targets, mask) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("detection head preconditions and degenerate zero head") {
  ModelConfig c = tiny_config();
  TransformerLM<double> m(c);
  m.init(3);
  m.tensor("det.w").v.assign(m.tensor("det.w").v.size(), 0.0);
  m.tensor("det.b").v.assign(2, 0.0);
  Acts<double> acts;
  auto ids = random_ids(c, 6, 4);
  m.forward(ids, acts);
  CHECK_THROWS_AS(m.detect_logits(acts), std::invalid_argument);  // no CLS at the end

  ids.back() = kCls;
  m.forward(ids, acts);
  auto dl = m.detect_logits(acts);
  CHECK(dl[0] == 0.0);
  CHECK(dl[1] == 0.0);  // probability 0.5
}

TEST_CASE("gradients match central finite differences (rel err < 1e-4)") {
  ModelConfig c = tiny_config();
  TransformerLM<double> m(c);
  m.init(101);
  LossProbe probe(c, 55);
  Acts<double> acts;

  m.zero_grad();
  probe.backward(m, acts);

  const double h = 1e-5;
  double worst = 0;
  for (auto& p : m.params()) {
    for (size_t i = 0; i < p.tensor->v.size(); ++i) {
      double saved = p.tensor->v[i];
      p.tensor->v[i] = saved + h;
      double up = probe.loss(m, acts);
      p.tensor->v[i] = saved - h;
      double down = probe.loss(m, acts);
      p.tensor->v[i] = saved;
      double fd = (up - down) / (2 * h);
      double an = p.tensor->g[i];
      double rel = std::abs(fd - an) / std::max(1e-8, std::max(std::abs(fd), std::abs(an)));
      if (std::abs(fd) < 1e-10 && std::abs(an) < 1e-10) rel = 0;
      worst = std::max(worst, rel);
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("masked positions contribute nothing to any gradient") {
  ModelConfig c = tiny_config();
  TransformerLM<double> m(c);
  m.init(31);
  Acts<double> acts;
  auto ids = random_ids(c, 8, 17);
  std::vector<int> targets = random_ids(c, 8, 18);
  std::vector<uint8_t> mask(8, 0);
  mask[1] = mask[3] = 1;

  Tensor<double> dlogits;
  m.zero_grad();
  m.forward(ids, acts);
  lm_loss_and_grad(acts.logits, targets, mask, 1.0, dlogits);
  m.backward(acts, dlogits);
  // dlogits rows at masked-out positions are identically zero
  for (int i : {0, 2, 4, 5, 6, 7})
    for (int v = 0; v < c.vocab_size; ++v)
      CHECK(dlogits.v[i * c.vocab_size + v] == 0.0);
  // flipping a masked-out target changes no gradient
  auto snapshot = m.tensor("lm_head.w").g;
  targets[0] = (targets[0] + 1) % c.vocab_size;
  m.zero_grad();
  m.forward(ids, acts);
  lm_loss_and_grad(acts.logits, targets, mask, 1.0, dlogits);
  m.backward(acts, dlogits);
  CHECK(m.tensor("lm_head.w").g == snapshot);
}

TEST_CASE("softmax_logits is stable, normalized, and temperature-scaled") {
  std::vector<double> logits{1000.0, 999.0, 998.0};
  auto p = softmax_logits<double>(logits, 1.0);
  double sum = p[0] + p[1] + p[2];
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(p[0] > p[1]);

  // temperature 1 is the identity on probabilities
  std::vector<double> l2{0.3, -1.2, 2.0, 0.0};
  auto base = softmax_logits<double>(l2, 1.0);
  std::vector<double> manual(4);
  double mx = 2.0, s = 0;
  for (int i = 0; i < 4; ++i) s += std::exp(l2[i] - mx);
  for (int i = 0; i < 4; ++i) manual[i] = std::exp(l2[i] - mx) / s;
  for (int i = 0; i < 4; ++i) CHECK(base[i] == doctest::Approx(manual[i]).epsilon(1e-12));

  // higher temperature flattens
  auto hot = softmax_logits<double>(l2, 4.0);
  CHECK(hot[2] < base[2]);
  CHECK_THROWS_AS(softmax_logits<double>(l2, 0.0), std::invalid_argument);
}

TEST_CASE("incremental decoder matches the batch forward pass") {
  ModelConfig c = tiny_config();
  TransformerLM<double> m(c);
  m.init(77);
  auto ids = random_ids(c, 10, 41);
  Acts<double> acts;
  m.forward(ids, acts);

  Decoder<double> dec(m);
  for (int t = 0; t < 10; ++t) {
    const auto& row = dec.step(ids[t]);
    for (int v = 0; v < c.vocab_size; ++v)
      CHECK(row[v] ==
            doctest::Approx(acts.logits.v[t * c.vocab_size + v]).epsilon(1e-9));
  }
  CHECK(dec.pos() == 10);
  dec.reset();
  CHECK(dec.pos() == 0);
}

TEST_CASE("decoder replay is bit-exact against itself") {
  ModelConfig c = tiny_config();
  TransformerLM<double> m(c);
  m.init(123);
  auto ids = random_ids(c, 14, 5);
  std::vector<std::vector<double>> first;
  Decoder<double> d1(m);
  for (int t : ids) first.push_back(d1.step(t));
  Decoder<double> d2(m);
  for (size_t t = 0; t < ids.size(); ++t) CHECK(d2.step(ids[t]) == first[t]);
}

TEST_CASE("decoder rejects overflow and bad ids") {
  ModelConfig c = tiny_config();
  TransformerLM<double> m(c);
  m.init(1);
  Decoder<double> dec(m);
  for (int i = 0; i < c.max_seq; ++i) dec.step(1);
  CHECK_THROWS_AS(dec.step(1), std::runtime_error);
  dec.reset();
  CHECK_THROWS_AS(dec.step(c.vocab_size), std::invalid_argument);
}
