// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "tabloid/detect.hpp"
#include "tabloid/fields.hpp"
#include "tabloid/ngram.hpp"
#include "tabloid/synth.hpp"

using namespace tabloid;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.layers = 1;
  c.d_model = 32;
  c.n_heads = 2;
  c.vocab_size = 268;
  c.max_seq = 256;
  c.preset = "tiny-test";
  return c;
}

Vocab byte_vocab() { return Vocab(); }

LabeledArticle labeled(const ArticleRecord& a, Label l) {
  LabeledArticle r;
  r.article = a;
  r.label = l;
  if (l == Label::Machine) {
    r.generator_id = "tiny-test";
    r.top_p = 0.96;
  }
  return r;
}

/// Trivially separable dataset: machine bodies use one lexicon, human
/// bodies another.
std::vector<LabeledArticle> separable_dataset(int n_per_label, uint64_t seed) {
  Rng rng(seed);
  std::vector<LabeledArticle> out;
  for (int i = 0; i < n_per_label; ++i) {
    ArticleRecord h{"h.com", "2019-04-02", {}, "head h" + std::to_string(i), ""};
    ArticleRecord m{"m.com", "2019-04-03", {}, "head m" + std::to_string(i), ""};
    for (int w = 0; w < 10; ++w) {
      h.body += rng.bernoulli(0.5) ? "alpha " : "bravo ";
      m.body += rng.bernoulli(0.5) ? "zulu " : "yankee ";
    }
    out.push_back(labeled(h, Label::Human));
    out.push_back(labeled(m, Label::Machine));
  }
  return out;
}

}  // namespace

TEST_CASE("detect input layout: canonical blocks then CLS, truncated to the cap") {
  Vocab v = byte_vocab();
  ArticleRecord a{"d.com", "2019-04-02", {"ada"}, "headline", "body"};
  auto ids = detect_input_ids(v, a, 256);
  CHECK(ids.front() == field_start_id(Field::Domain));
  CHECK(ids.back() == kCls);
  // all five fields present in order
  std::vector<int> starts;
  for (int id : ids)
    if (id < 10 && id % 2 == 0) starts.push_back(id);
  CHECK(starts == std::vector<int>{0, 2, 4, 6, 8});

  auto capped = detect_input_ids(v, a, 10);
  CHECK(capped.size() == 10);
  CHECK(capped.back() == kCls);
}

TEST_CASE("unpaired accuracy: perfect, constant, and mixed scorers") {
  auto data = separable_dataset(4, 1);
  MachineScorer perfect = [](const ArticleRecord& a) {
    return a.domain == "m.com" ? 0.9 : 0.1;
  };
  CHECK(unpaired_accuracy(perfect, data) == 1.0);

  MachineScorer constant = [](const ArticleRecord&) { return 0.5; };
  CHECK(unpaired_accuracy(constant, data) == 0.5);

  MachineScorer wrong = [](const ArticleRecord& a) { return a.domain == "m.com" ? 0.1 : 0.9; };
  CHECK(unpaired_accuracy(wrong, data) == 0.0);
}

TEST_CASE("paired accuracy with ties counting half") {
  std::vector<std::pair<ArticleRecord, ArticleRecord>> pairs(4);
  for (int i = 0; i < 4; ++i) {
    pairs[i].first.headline = "human" + std::to_string(i);
    pairs[i].second.headline = "machine" + std::to_string(i);
  }
  MachineScorer good = [](const ArticleRecord& a) {
    return a.headline.starts_with("machine") ? 0.9 : 0.2;
  };
  CHECK(paired_accuracy(good, pairs) == 1.0);

  MachineScorer tie_on_last = [](const ArticleRecord& a) {
    if (a.headline == "human3" || a.headline == "machine3") return 0.5;
    return a.headline.starts_with("machine") ? 0.9 : 0.2;
  };
  CHECK(paired_accuracy(tie_on_last, pairs) == doctest::Approx(0.875));
}

TEST_CASE("paired accuracy is invariant under strictly increasing score transforms") {
  auto data = separable_dataset(6, 2);
  std::vector<std::pair<ArticleRecord, ArticleRecord>> pairs;
  for (size_t i = 0; i + 1 < data.size(); i += 2)
    pairs.emplace_back(data[i].article, data[i + 1].article);
  MachineScorer base = [](const ArticleRecord& a) {
    return 0.3 + 0.2 * (a.domain == "m.com") + 0.01 * (a.headline.size() % 3);
  };
  MachineScorer squashed = [&](const ArticleRecord& a) {
    return 1.0 / (1.0 + std::exp(-7.0 * base(a)));  // strictly increasing
  };
  CHECK(paired_accuracy(base, pairs) == paired_accuracy(squashed, pairs));
}

TEST_CASE("pair_by_metadata matches on all four metadata fields") {
  auto data = separable_dataset(3, 3);
  std::vector<ArticleRecord> sources;
  std::vector<LabeledArticle> machine;
  for (auto& r : data)
    if (r.label == Label::Machine) {
      ArticleRecord human_side = r.article;
      human_side.body = "the original human body";
      sources.push_back(human_side);
      machine.push_back(r);
    }
  auto pairs = pair_by_metadata(machine, sources);
  REQUIRE(pairs.size() == machine.size());
  for (auto& [h, m] : pairs) {
    CHECK(h.domain == m.domain);
    CHECK(h.headline == m.headline);
    CHECK(h.body != m.body);
  }

  machine[0].article.headline = "no such metadata";
  CHECK_THROWS_AS(pair_by_metadata(machine, sources), std::invalid_argument);
}

TEST_CASE("train_discriminator enforces the earlier-checkpoint rule and balance") {
  Vocab v = byte_vocab();
  TransformerLM<double> init(tiny_config());
  init.init(1);
  DetectionDataset data;
  data.split.train = separable_dataset(4, 4);
  data.prov = {"tiny-test", 800};
  DiscTrainConfig cfg;
  cfg.epochs = 1;
  cfg.max_len = 96;
  cfg.verbose = false;

  // same preset, init step not earlier -> error
  CHECK_THROWS_AS(train_discriminator(init, 800, v, data, cfg), std::invalid_argument);
  CHECK_THROWS_AS(train_discriminator(init, 900, v, data, cfg), std::invalid_argument);

  // unbalanced split -> error
  DetectionDataset bad = data;
  bad.split.train.push_back(bad.split.train[0]);
  bad.split.train.push_back(bad.split.train[0]);
  CHECK_THROWS_AS(train_discriminator(init, 700, v, bad, cfg), std::invalid_argument);

  // different preset skips the step comparison
  DetectionDataset other = data;
  other.prov.generator_preset = "another-preset";
  CHECK_NOTHROW(train_discriminator(init, 800, v, other, cfg));
}

TEST_CASE("discriminator training lifts train accuracy above chance on separable data") {
  Vocab v = byte_vocab();
  TransformerLM<double> init(tiny_config());
  init.init(7);
  DetectionDataset data;
  data.split.train = separable_dataset(12, 5);
  data.prov = {"tiny-test", 800};
  DiscTrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 8;
  cfg.max_len = 96;
  cfg.lr = 1e-3;
  cfg.verbose = false;
  cfg.seed = 11;
  auto model = train_discriminator(init, 700, v, data, cfg);
  auto scorer = [&](const ArticleRecord& a) { return machine_probability(model, v, a, 96); };
  CHECK(unpaired_accuracy(scorer, data.split.train) > 0.5);
}

TEST_CASE("aux coefficient zero leaves the LM head untouched") {
  Vocab v = byte_vocab();
  TransformerLM<double> init(tiny_config());
  init.init(9);
  DetectionDataset data;
  data.split.train = separable_dataset(6, 6);
  data.prov = {"tiny-test", 800};
  DiscTrainConfig cfg;
  cfg.epochs = 1;
  cfg.max_len = 96;
  cfg.verbose = false;

  cfg.aux_lm_coeff = 0.0;
  auto pure = train_discriminator(init, 700, v, data, cfg);
  CHECK(pure.tensor("lm_head.w").v == init.tensor("lm_head.w").v);
  CHECK(pure.tensor("lm_head.b").v == init.tensor("lm_head.b").v);
  CHECK(pure.tensor("det.w").v != init.tensor("det.w").v);

  cfg.aux_lm_coeff = 0.5;
  auto mixed = train_discriminator(init, 700, v, data, cfg);
  CHECK(mixed.tensor("lm_head.w").v != init.tensor("lm_head.w").v);
}

TEST_CASE("build_generations: empty request, metadata preservation") {
  Vocab v = byte_vocab();
  TransformerLM<double> model(tiny_config());
  model.init(13);
  SynthConfig sc;
  sc.n_articles = 5;
  sc.seed = 2;
  auto sources = synth_corpus(sc);
  SamplerConfig cfg;
  cfg.max_new_tokens = 6;

  CHECK(build_generations(model, v, sources, 0.96, 0, cfg, "tiny-test", 1).empty());

  std::vector<std::vector<int>> ids;
  auto gens = build_generations(model, v, sources, 0.9, 3, cfg, "tiny-test", 1, &ids);
  REQUIRE(gens.size() == 3);
  REQUIRE(ids.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(gens[i].article.domain == sources[i].domain);
    CHECK(gens[i].article.date == sources[i].date);
    CHECK(gens[i].article.authors == sources[i].authors);
    CHECK(gens[i].article.headline == sources[i].headline);
    CHECK(gens[i].label == Label::Machine);
    CHECK(gens[i].top_p == 0.9);
    CHECK(gens[i].generator_id == "tiny-test");
  }
  CHECK_THROWS_AS(build_generations(model, v, sources, 0.9, 99, cfg, "t", 1),
                  std::invalid_argument);
}

TEST_CASE("evaluate_detector fills the per-p recall breakdown") {
  Vocab v = byte_vocab();
  TransformerLM<double> model(tiny_config());  // zero weights: every score 0.5
  auto data = separable_dataset(3, 8);
  data[1].top_p = 0.9;  // vary the machine thresholds
  auto rep = evaluate_detector(model, v, data, nullptr, 96, 1, 42);
  CHECK(rep.n_test == 6);
  CHECK(rep.seed == 42);
  CHECK(rep.unpaired_accuracy == doctest::Approx(0.5));  // all ties
  CHECK(rep.per_p_machine_recall.size() == 2);
  CHECK(rep.paired_accuracy == -1);
  auto json = rep.to_json();
  CHECK(json.find("unpaired_accuracy") != std::string::npos);
}

TEST_CASE("ngram classifier separates a linearly separable vocabulary split") {
  auto train = separable_dataset(40, 10);
  auto test = separable_dataset(40, 11);
  NgramConfig cfg;
  cfg.epochs = 6;
  cfg.seed = 1;
  NgramClassifier clf(cfg);
  clf.train(train);
  auto scorer = [&](const ArticleRecord& a) { return clf.p_machine(a); };
  CHECK(unpaired_accuracy(scorer, test) == 1.0);
}

TEST_CASE("ngram classifier on shuffled labels stays near chance") {
  // human/machine bodies drawn from the same distribution, labels carry no
  // signal: test accuracy must sit near 0.5
  Rng rng(77);
  auto make = [&](int n, uint64_t seed) {
    Rng r(seed);
    std::vector<LabeledArticle> out;
    for (int i = 0; i < n; ++i) {
      ArticleRecord a{"x.com", "2019-04-02", {}, "h" + std::to_string(i), ""};
      for (int w = 0; w < 12; ++w)
        a.body += r.bernoulli(0.5) ? "alpha " : "bravo ";
      out.push_back(labeled(a, r.bernoulli(0.5) ? Label::Machine : Label::Human));
    }
    return out;
  };
  auto train = make(400, 1);
  auto test = make(800, 2);
  NgramConfig cfg;
  cfg.epochs = 4;
  cfg.seed = 3;
  NgramClassifier clf(cfg);
  clf.train(train);
  auto scorer = [&](const ArticleRecord& a) { return clf.p_machine(a); };
  double acc = unpaired_accuracy(scorer, test);
  CHECK(acc > 0.45);
  CHECK(acc < 0.55);
}

TEST_CASE("weak supervision at x = total matches the all-strong baseline bitwise") {
  Vocab v = byte_vocab();
  ModelConfig c = tiny_config();
  TransformerLM<double> strong(c), weak(c), init(c);
  strong.init(1);
  weak.init(2);
  init.init(3);
  SynthConfig sc;
  sc.n_articles = 40;
  sc.seed = 9;
  auto pool = synth_corpus(sc);
  std::vector<ArticleRecord> sources(pool.begin(), pool.begin() + 20);
  std::vector<ArticleRecord> humans(pool.begin() + 20, pool.end());

  WeakSupRunConfig cfg;
  cfg.x = 8;
  cfg.total = 8;  // x == total: no weak articles at all
  cfg.n_eval_per_label = 6;
  cfg.disc.epochs = 1;
  cfg.disc.max_len = 96;
  cfg.disc.verbose = false;
  cfg.gen.max_new_tokens = 5;
  cfg.seed = 4;
  auto res = weak_supervision_run(strong, 800, weak, init, 700, v, sources, humans, cfg);
  CHECK(res.with_weak.unpaired_accuracy == res.baseline.unpaired_accuracy);
  CHECK(res.with_weak.paired_accuracy == res.baseline.paired_accuracy);

  // x = 0: all-weak training set still runs; baseline reports chance
  cfg.x = 0;
  auto zero = weak_supervision_run(strong, 800, weak, init, 700, v, sources, humans, cfg);
  CHECK(zero.baseline.unpaired_accuracy == 0.5);
  CHECK(zero.with_weak.n_test == 12);
}
