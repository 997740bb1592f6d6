// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "tabloid/analysis.hpp"
#include "tabloid/sampler.hpp"
#include "tabloid/synth.hpp"

using namespace tabloid;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.layers = 1;
  c.d_model = 16;
  c.n_heads = 2;
  c.vocab_size = 268;
  c.max_seq = 160;
  c.preset = "tiny-test";
  return c;
}

std::vector<ArticleRecord> small_corpus(int n, uint64_t seed) {
  SynthConfig cfg;
  cfg.n_articles = n;
  cfg.seed = seed;
  cfg.min_topic_sentences = 1;
  cfg.max_topic_sentences = 2;
  return synth_corpus(cfg);
}

}  // namespace

TEST_CASE("a uniform model scores body perplexity exactly V") {
  TransformerLM<double> m(tiny_config());  // zero weights: uniform logits
  Vocab v;
  auto articles = small_corpus(4, 1);
  auto rep = body_perplexity(m, v, articles, true);
  CHECK(rep.perplexity == doctest::Approx(268.0).epsilon(1e-9));
  CHECK(rep.mode == "conditional");
  CHECK(rep.n_articles == 4);
  CHECK(rep.n_tokens > 0);
  CHECK(rep.macro_perplexity == doctest::Approx(268.0).epsilon(1e-9));
}

TEST_CASE("conditional with an empty context equals unconditional") {
  TransformerLM<double> m(tiny_config());
  m.init(3);
  Vocab v;
  auto articles = small_corpus(3, 2);
  auto empty_ctx = body_perplexity_ctx(m, v, articles, FieldSet{});
  auto uncond = body_perplexity(m, v, articles, false);
  CHECK(empty_ctx.perplexity == uncond.perplexity);
  CHECK(empty_ctx.total_nll == uncond.total_nll);
}

TEST_CASE("perplexity is invariant to article ordering") {
  TransformerLM<double> m(tiny_config());
  m.init(5);
  Vocab v;
  auto articles = small_corpus(5, 3);
  auto fwd = body_perplexity(m, v, articles, true);
  std::reverse(articles.begin(), articles.end());
  auto rev = body_perplexity(m, v, articles, true);
  CHECK(fwd.perplexity == doctest::Approx(rev.perplexity).epsilon(1e-12));
}

TEST_CASE("position curves: identical inputs give identical curves; uniform model is flat") {
  TransformerLM<double> m(tiny_config());
  Vocab v;
  auto articles = small_corpus(4, 4);
  auto texts = scored_texts_from_articles(v, articles);
  auto a = perplexity_by_position(m, v, texts, "a");
  auto b = perplexity_by_position(m, v, texts, "b");
  CHECK(a.mean_nll == b.mean_nll);
  CHECK(a.count == b.count);
  for (double nll : a.mean_nll) CHECK(nll == doctest::Approx(std::log(268.0)).epsilon(1e-9));
}

TEST_CASE("position curve totals reproduce body_perplexity's NLL total") {
  TransformerLM<double> m(tiny_config());
  m.init(7);
  Vocab v;
  auto articles = small_corpus(6, 5);
  auto texts = scored_texts_from_articles(v, articles);
  auto curve = perplexity_by_position(m, v, texts, "human");
  auto rep = body_perplexity(m, v, articles, true);
  CHECK(curve.total_tokens == rep.n_tokens);
  CHECK(curve.total_nll == doctest::Approx(rep.total_nll).epsilon(1e-9));
  // and the bucketed sums agree with the totals
  double bucket_sum = 0;
  for (size_t i = 0; i < curve.mean_nll.size(); ++i)
    bucket_sum += curve.mean_nll[i] * curve.count[i];
  CHECK(bucket_sum == doctest::Approx(curve.total_nll).epsilon(1e-9));
}

TEST_CASE("coverage cutoff trims sparsely covered tail positions") {
  PositionCurve c;
  c.count = {10, 10, 10, 5, 2, 1};
  c.mean_nll = {1, 1, 1, 1, 1, 1};
  CHECK(c.coverage_cutoff(0.25) == 4);  // 2 < ceil(0.25*10)=3
  CHECK(c.coverage_cutoff(0.05) == 6);
}

TEST_CASE("gap_slope closed-form cases") {
  PositionCurve human, gen;
  human.mean_nll.assign(50, 2.0);
  human.count.assign(50, 100);
  gen = human;
  CHECK(gap_slope(human, gen) == doctest::Approx(0.0));

  for (int i = 0; i < 50; ++i) gen.mean_nll[i] = 2.0 + 0.01 * i;  // rising gap
  CHECK(gap_slope(human, gen) == doctest::Approx(0.01).epsilon(1e-9));

  for (int i = 0; i < 50; ++i) gen.mean_nll[i] = 2.7;  // constant gap
  CHECK(gap_slope(human, gen) == doctest::Approx(0.0).epsilon(1e-9));

  PositionCurve tiny;
  tiny.mean_nll = {1.0};
  tiny.count = {5};
  CHECK_THROWS_AS(gap_slope(human, tiny), std::invalid_argument);
}

TEST_CASE("tail occupancy is zero at p = 1 for any text") {
  TransformerLM<double> m(tiny_config());
  m.init(9);
  Vocab v;
  auto articles = small_corpus(3, 6);
  auto texts = scored_texts_from_articles(v, articles);
  CHECK(tail_occupancy(m, v, texts, 1.0) == 0.0);
}

TEST_CASE("tail occupancy of own generations at their threshold is exactly zero") {
  TransformerLM<double> m(tiny_config());
  m.init(11);
  Vocab v;
  auto sources = small_corpus(4, 7);
  SamplerConfig cfg;
  cfg.max_new_tokens = 30;
  cfg.seed = 123;
  for (double p : {0.8, 0.96}) {
    std::vector<std::vector<int>> ids;
    auto gens = build_generations(m, v, sources, p, 4, cfg, "tiny-test", 1, &ids);
    std::vector<ScoredText> texts(gens.size());
    for (size_t i = 0; i < gens.size(); ++i) texts[i] = {&gens[i].article, ids[i]};
    CHECK(tail_occupancy(m, v, texts, p) == 0.0);
  }
}

TEST_CASE("tail occupancy flags tokens outside a truncated nucleus") {
  TransformerLM<double> m(tiny_config());
  m.init(13);
  Vocab v;
  auto articles = small_corpus(4, 8);
  // an untrained model's nucleus at small p keeps few tokens; arbitrary
  // human byte sequences fall outside it
  auto texts = scored_texts_from_articles(v, articles);
  CHECK(tail_occupancy(m, v, texts, 0.05) > 0.0);
}

TEST_CASE("sweep report lists rows ascending with a trailing argmin") {
  std::map<double, DetectionReport> by_p;
  DetectionReport a;
  a.unpaired_accuracy = 0.93;
  a.paired_accuracy = 0.95;
  DetectionReport b;
  b.unpaired_accuracy = 0.71;
  b.paired_accuracy = 0.74;
  by_p[1.00] = a;
  by_p[0.96] = b;
  std::string csv = sweep_report(by_p);
  CHECK(csv.find("p,unpaired_acc,paired_acc\n0.96,0.710000") != std::string::npos);
  CHECK(csv.find("argmin,0.96") != std::string::npos);
  // rows ascend in p
  CHECK(csv.find("0.96,") < csv.find("1.00,"));

  std::map<double, DetectionReport> one{{0.9, a}};
  CHECK_THROWS_AS(sweep_report(one), std::invalid_argument);
}

TEST_CASE("csv emitters") {
  PerplexityReport r;
  r.mode = "conditional";
  r.perplexity = 12.5;
  r.n_tokens = 100;
  std::vector<PerplexityReport> rs{r};
  CHECK(ppl_csv(rs) == "mode,ppl,n_tokens\nconditional,12.500000,100\n");

  PositionCurve c;
  c.source = "human";
  c.mean_nll = {1.5, 2.5, 3.5};
  c.count = {10, 10, 1};
  std::vector<PositionCurve> cs{c};
  std::string csv = ppl_by_pos_csv(cs, 0.25);
  CHECK(csv.find("human,0,1.500000,10") != std::string::npos);
  CHECK(csv.find("human,2,") == std::string::npos);  // trimmed by coverage
}
