// SPDX-License-Identifier: Apache-2.0
#include "tabloid/detect.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "tabloid/fields.hpp"
#include "tabloid/optim.hpp"
#include "tabloid/util.hpp"

namespace tabloid {

std::string DetectionReport::to_json() const {
  nlohmann::ordered_json j;
  j["unpaired_accuracy"] = unpaired_accuracy;
  if (paired_accuracy >= 0) j["paired_accuracy"] = paired_accuracy;
  j["n_test"] = n_test;
  j["seed"] = seed;
  nlohmann::ordered_json per_p = nlohmann::ordered_json::object();
  for (auto& [p, r] : per_p_machine_recall) {
    char key[16];
    std::snprintf(key, sizeof(key), "%.2f", p);
    per_p[key] = r;
  }
  j["per_p_machine_recall"] = per_p;
  return j.dump(2);
}

std::vector<int> detect_input_ids(const Vocab& vocab, const ArticleRecord& a, int max_len) {
  if (max_len < 2) throw std::invalid_argument("detect_input_ids: max_len too small");
  std::vector<int> ids = encode_context(vocab, a, FieldSet::all());
  if (static_cast<int>(ids.size()) > max_len - 1) ids.resize(max_len - 1);
  ids.push_back(kCls);
  return ids;
}

template <class T>
std::vector<LabeledArticle> build_generations(const TransformerLM<T>& model, const Vocab& vocab,
                                              std::span<const ArticleRecord> sources, double p,
                                              int n, const SamplerConfig& cfg,
                                              const std::string& generator_id, int threads,
                                              std::vector<std::vector<int>>* ids_out) {
  if (n < 0 || static_cast<size_t>(n) > sources.size())
    throw std::invalid_argument("build_generations: need at least n source articles");
  std::vector<LabeledArticle> out(n);
  if (ids_out) ids_out->assign(n, {});
  Rng root(cfg.seed);
  SamplerConfig gen_cfg = cfg;
  gen_cfg.strategy = Strategy::Nucleus;
  gen_cfg.p = p;
  parallel_for(static_cast<size_t>(n), threads, [&](size_t i) {
    Rng rng = root.fork("gen-" + std::to_string(i));
    GenerateOptions opts;
    opts.generator_id = generator_id;
    GenerationResult r = generate_article(model, vocab, sources[i], FieldSet::metadata(),
                                          gen_cfg, opts, rng);
    out[i] = std::move(r.article);
    if (ids_out) (*ids_out)[i] = std::move(r.body_ids);
  });
  return out;
}

namespace {

void check_balance(const std::vector<LabeledArticle>& train) {
  long h = 0, m = 0;
  for (const auto& a : train) (a.label == Label::Human ? h : m)++;
  if (std::labs(h - m) > 1)
    throw std::invalid_argument("unbalanced train split: " + std::to_string(h) + " human vs " +
                                std::to_string(m) + " machine");
}

}  // namespace

template <class T>
TransformerLM<T> train_discriminator(const TransformerLM<T>& init, int64_t init_step,
                                     const Vocab& vocab, const DetectionDataset& data,
                                     const DiscTrainConfig& cfg) {
  const auto& train = data.split.train;
  if (train.empty()) throw std::invalid_argument("train_discriminator: empty train split");
  check_balance(train);
  if (!data.prov.generator_preset.empty() && init.config().preset == data.prov.generator_preset &&
      init_step >= data.prov.generator_step)
    throw std::invalid_argument(
        "discriminator init checkpoint (step " + std::to_string(init_step) +
        ") must be strictly earlier than the same-preset generator checkpoint (step " +
        std::to_string(data.prov.generator_step) + ")");

  TransformerLM<T> model = init;
  Rng root(cfg.seed);

  int batches_per_epoch = static_cast<int>((train.size() + cfg.batch_size - 1) / cfg.batch_size);
  int total_steps = cfg.epochs * batches_per_epoch;
  OptimizerConfig ocfg = OptimizerConfig::adam(
      cfg.lr, total_steps, static_cast<int>(cfg.warmup_frac * total_steps + 0.5));
  Adam<T> optimizer(ocfg);
  auto params = model.params();

  // pre-tokenize
  std::vector<std::vector<int>> inputs(train.size());
  std::vector<int> labels(train.size());
  for (size_t i = 0; i < train.size(); ++i) {
    inputs[i] = detect_input_ids(vocab, train[i].article, cfg.max_len);
    labels[i] = train[i].label == Label::Machine ? 1 : 0;
  }

  Acts<T> acts;
  Tensor<T> dlogits;
  std::vector<int> targets;
  std::vector<uint8_t> mask;
  std::vector<size_t> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng order_rng = root.fork("order");

  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_loss = 0;
    double epoch_correct = 0;
    size_t cursor = 0;
    for (int b = 0; b < batches_per_epoch; ++b) {
      model.zero_grad();
      int bsz = static_cast<int>(std::min<size_t>(cfg.batch_size, train.size() - cursor));
      if (bsz == 0) break;
      for (int k = 0; k < bsz; ++k) {
        const std::vector<int>& ids = inputs[order[cursor]];
        int label = labels[order[cursor]];
        ++cursor;
        model.forward(ids, acts);

        // detection cross-entropy
        std::array<T, 2> dl = model.detect_logits(acts);
        double mx = std::max<double>(dl[0], dl[1]);
        double z0 = std::exp(static_cast<double>(dl[0]) - mx);
        double z1 = std::exp(static_cast<double>(dl[1]) - mx);
        double denom = z0 + z1;
        double p0 = z0 / denom, p1 = z1 / denom;
        epoch_loss += -std::log(label == 1 ? p1 : p0);
        epoch_correct += (p1 > p0) == (label == 1) ? 1.0 : (p1 == p0 ? 0.5 : 0.0);
        double scale = 1.0 / bsz;
        std::array<T, 2> dcls{static_cast<T>((p0 - (label == 0)) * scale),
                              static_cast<T>((p1 - (label == 1)) * scale)};

        // auxiliary next-token loss over the article tokens (not the CLS)
        size_t n = ids.size();
        if (cfg.aux_lm_coeff > 0 && n >= 3) {
          targets.assign(n, 0);
          mask.assign(n, 0);
          for (size_t i = 0; i + 2 < n; ++i) {
            targets[i] = ids[i + 1];
            mask[i] = 1;
          }
          lm_loss_and_grad(acts.logits, targets, mask, cfg.aux_lm_coeff * scale, dlogits);
        } else {
          dlogits.shape = {static_cast<int>(n), model.config().vocab_size};
          dlogits.v.assign(dlogits.numel(), T(0));
        }
        model.backward(acts, dlogits, &dcls);
      }
      optimizer.step(params, step++);
    }
    if (cfg.verbose) {
      std::printf("[disc] epoch %d/%d  loss %.4f  train-acc %.3f\n", epoch + 1, cfg.epochs,
                  epoch_loss / train.size(), epoch_correct / train.size());
      std::fflush(stdout);
    }
  }
  return model;
}

template <class T>
double machine_probability(const TransformerLM<T>& model, const Vocab& vocab,
                           const ArticleRecord& a, int max_len) {
  Acts<T> acts;
  std::vector<int> ids = detect_input_ids(vocab, a, max_len);
  model.forward(ids, acts);
  std::array<T, 2> dl = model.detect_logits(acts);
  double mx = std::max<double>(dl[0], dl[1]);
  double z0 = std::exp(static_cast<double>(dl[0]) - mx);
  double z1 = std::exp(static_cast<double>(dl[1]) - mx);
  return z1 / (z0 + z1);
}

double unpaired_accuracy(const MachineScorer& scorer, std::span<const LabeledArticle> test) {
  if (test.empty()) throw std::invalid_argument("unpaired_accuracy: empty test set");
  double correct = 0;
  for (const auto& a : test) {
    double p = scorer(a.article);
    if (p == 0.5) correct += 0.5;
    else if ((p > 0.5) == (a.label == Label::Machine)) correct += 1.0;
  }
  return correct / static_cast<double>(test.size());
}

double paired_accuracy(const MachineScorer& scorer,
                       std::span<const std::pair<ArticleRecord, ArticleRecord>> pairs) {
  if (pairs.empty()) throw std::invalid_argument("paired_accuracy: empty pair set");
  double correct = 0;
  for (const auto& [human, machine] : pairs) {
    double ph = scorer(human), pm = scorer(machine);
    if (pm > ph) correct += 1.0;
    else if (pm == ph) correct += 0.5;
  }
  return correct / static_cast<double>(pairs.size());
}

namespace {

std::string metadata_key(const ArticleRecord& a) {
  std::string k = a.domain + '\x01' + a.date + '\x01' + a.headline + '\x01';
  for (const auto& n : a.authors) {
    k += n;
    k += '\x02';
  }
  return k;
}

}  // namespace

std::vector<std::pair<ArticleRecord, ArticleRecord>> pair_by_metadata(
    std::span<const LabeledArticle> machine, std::span<const ArticleRecord> human_sources) {
  std::unordered_map<std::string, const ArticleRecord*> by_key;
  for (const auto& h : human_sources) by_key[metadata_key(h)] = &h;
  std::vector<std::pair<ArticleRecord, ArticleRecord>> pairs;
  for (const auto& m : machine) {
    if (m.label != Label::Machine) continue;
    auto it = by_key.find(metadata_key(m.article));
    if (it == by_key.end())
      throw std::invalid_argument("no human source shares metadata with machine article '" +
                                  m.article.headline + "'");
    pairs.emplace_back(*it->second, m.article);
  }
  return pairs;
}

template <class T>
DetectionReport evaluate_detector(const TransformerLM<T>& model, const Vocab& vocab,
                                  std::span<const LabeledArticle> test,
                                  const std::vector<std::pair<ArticleRecord, ArticleRecord>>* pairs,
                                  int max_len, int threads, uint64_t seed) {
  DetectionReport rep;
  rep.n_test = static_cast<int>(test.size());
  rep.seed = seed;

  std::vector<double> scores(test.size());
  parallel_for(test.size(), threads, [&](size_t i) {
    scores[i] = machine_probability(model, vocab, test[i].article, max_len);
  });

  double correct = 0;
  std::map<double, std::pair<double, long>> recall;  // p -> (correct, count)
  for (size_t i = 0; i < test.size(); ++i) {
    double p = scores[i];
    double credit = p == 0.5 ? 0.5 : ((p > 0.5) == (test[i].label == Label::Machine) ? 1.0 : 0.0);
    correct += credit;
    if (test[i].label == Label::Machine && test[i].top_p) {
      auto& slot = recall[*test[i].top_p];
      slot.first += credit;
      slot.second += 1;
    }
  }
  rep.unpaired_accuracy = test.empty() ? 0 : correct / static_cast<double>(test.size());
  for (auto& [p, rc] : recall) rep.per_p_machine_recall[p] = rc.first / rc.second;

  if (pairs && !pairs->empty()) {
    std::vector<double> ph(pairs->size()), pm(pairs->size());
    parallel_for(pairs->size(), threads, [&](size_t i) {
      ph[i] = machine_probability(model, vocab, (*pairs)[i].first, max_len);
      pm[i] = machine_probability(model, vocab, (*pairs)[i].second, max_len);
    });
    double c = 0;
    for (size_t i = 0; i < pairs->size(); ++i)
      c += pm[i] > ph[i] ? 1.0 : (pm[i] == ph[i] ? 0.5 : 0.0);
    rep.paired_accuracy = c / static_cast<double>(pairs->size());
  }
  return rep;
}

namespace {

std::vector<LabeledArticle> as_human(std::span<const ArticleRecord> articles, int n) {
  std::vector<LabeledArticle> out(n);
  for (int i = 0; i < n; ++i) out[i].article = articles[i];
  return out;
}

}  // namespace

template <class T>
SweepResult adversarial_p_selection(const TransformerLM<T>& generator, int64_t generator_step,
                                    const TransformerLM<T>& disc_init, int64_t disc_init_step,
                                    const Vocab& vocab,
                                    std::span<const ArticleRecord> machine_sources,
                                    std::span<const ArticleRecord> human_pool,
                                    const SweepConfig& cfg) {
  if (cfg.grid.empty()) throw std::invalid_argument("sweep grid is empty");
  int n = cfg.n_per_label;
  if (static_cast<int>(machine_sources.size()) < n || static_cast<int>(human_pool.size()) < n)
    throw std::invalid_argument("sweep pools smaller than n_per_label");

  Rng root(cfg.seed);
  std::vector<LabeledArticle> humans = as_human(human_pool, n);
  SweepResult res;
  for (double p : cfg.grid) {
    SamplerConfig gen_cfg = cfg.gen;
    gen_cfg.seed = root.fork("gen").seed() ^ static_cast<uint64_t>(p * 1e6);
    std::vector<LabeledArticle> machines =
        build_generations(generator, vocab, machine_sources, p, n, gen_cfg,
                          generator.config().preset, cfg.threads);
    CorpusSplit split = make_detection_split(humans, machines, cfg.ratio, cfg.seed);
    DetectionDataset data{std::move(split), {generator.config().preset, generator_step}};

    DiscTrainConfig dcfg = cfg.disc;
    dcfg.seed = root.fork("disc").seed() ^ static_cast<uint64_t>(p * 1e6);
    TransformerLM<T> disc = train_discriminator(disc_init, disc_init_step, vocab, data, dcfg);

    auto scorer = [&](const ArticleRecord& a) {
      return machine_probability(disc, vocab, a, cfg.disc.max_len);
    };
    SweepPointReport point;
    point.p = p;
    point.val_unpaired = unpaired_accuracy(scorer, data.split.val);
    auto pairs = pair_by_metadata(data.split.test, machine_sources);
    point.test = evaluate_detector(disc, vocab, data.split.test, &pairs, cfg.disc.max_len,
                                   cfg.threads, cfg.seed);
    res.points.push_back(std::move(point));
    if (cfg.disc.verbose) {
      std::printf("[sweep] p=%.2f  val %.3f  test %.3f\n", p, res.points.back().val_unpaired,
                  res.points.back().test.unpaired_accuracy);
      std::fflush(stdout);
    }
  }
  res.chosen_p = res.points.front().p;
  double best = res.points.front().val_unpaired;
  for (const auto& pt : res.points) {
    if (pt.val_unpaired < best) {
      best = pt.val_unpaired;
      res.chosen_p = pt.p;
    }
  }
  return res;
}

template <class T>
WeakSupResult weak_supervision_run(const TransformerLM<T>& strong_gen, int64_t strong_step,
                                   const TransformerLM<T>& weak_gen,
                                   const TransformerLM<T>& disc_init, int64_t disc_init_step,
                                   const Vocab& vocab, std::span<const ArticleRecord> sources,
                                   std::span<const ArticleRecord> human_pool,
                                   const WeakSupRunConfig& cfg) {
  if (cfg.x < 0 || cfg.x > cfg.total)
    throw std::invalid_argument("weak supervision requires 0 <= x <= total");
  int need_sources = cfg.total + cfg.n_eval_per_label;
  int need_humans = cfg.total + cfg.n_eval_per_label;
  if (static_cast<int>(sources.size()) < need_sources ||
      static_cast<int>(human_pool.size()) < need_humans)
    throw std::invalid_argument("weak supervision pools too small");

  Rng root(cfg.seed);

  // strong train generations (the x in-domain examples, at the adversary's p)
  SamplerConfig strong_cfg = cfg.gen;
  strong_cfg.seed = root.fork("strong-train").seed();
  std::vector<LabeledArticle> strong_train = build_generations(
      strong_gen, vocab, sources.subspan(0, cfg.x), cfg.strong_p, cfg.x, strong_cfg,
      strong_gen.config().preset, cfg.threads);

  // weak generations with per-article p ~ U[p_lo, p_hi]
  std::vector<LabeledArticle> weak_train;
  {
    int n_weak = cfg.total - cfg.x;
    weak_train.resize(n_weak);
    Rng prng = root.fork("weak-p");
    std::span<const ArticleRecord> weak_sources = sources.subspan(cfg.x, n_weak);
    for (int i = 0; i < n_weak; ++i) {
      double p = cfg.p_lo + (cfg.p_hi - cfg.p_lo) * prng.uniform01();
      SamplerConfig wc = cfg.gen;
      wc.seed = root.fork("weak-" + std::to_string(i)).seed();
      auto one = build_generations(weak_gen, vocab, weak_sources.subspan(i, 1), p, 1, wc,
                                   weak_gen.config().preset, 1);
      weak_train[i] = std::move(one[0]);
    }
  }

  // fixed held-out evaluation against the strong generator
  SamplerConfig eval_cfg = cfg.gen;
  eval_cfg.seed = root.fork("strong-eval").seed();
  std::span<const ArticleRecord> eval_sources = sources.subspan(cfg.total, cfg.n_eval_per_label);
  std::vector<LabeledArticle> eval_machine =
      build_generations(strong_gen, vocab, eval_sources, cfg.strong_p, cfg.n_eval_per_label,
                        eval_cfg, strong_gen.config().preset, cfg.threads);
  std::vector<LabeledArticle> test = eval_machine;
  {
    auto eval_humans = as_human(human_pool.subspan(cfg.total, cfg.n_eval_per_label),
                                cfg.n_eval_per_label);
    test.insert(test.end(), eval_humans.begin(), eval_humans.end());
  }
  auto pairs = pair_by_metadata(eval_machine, eval_sources);

  auto run_condition = [&](std::vector<LabeledArticle> machine_train,
                           int n_human) -> DetectionReport {
    std::vector<LabeledArticle> train = as_human(human_pool, n_human);
    train.insert(train.end(), machine_train.begin(), machine_train.end());
    CorpusSplit split;
    split.train = std::move(train);
    split.test = test;
    DetectionDataset data{std::move(split), {strong_gen.config().preset, strong_step}};
    DiscTrainConfig dcfg = cfg.disc;
    dcfg.seed = root.fork("disc").seed();
    TransformerLM<T> disc = train_discriminator(disc_init, disc_init_step, vocab, data, dcfg);
    return evaluate_detector(disc, vocab, data.split.test, &pairs, cfg.disc.max_len, cfg.threads,
                             cfg.seed);
  };

  WeakSupResult res;
  res.x = cfg.x;
  {
    std::vector<LabeledArticle> machine_train = strong_train;
    machine_train.insert(machine_train.end(), weak_train.begin(), weak_train.end());
    res.with_weak = run_condition(std::move(machine_train), cfg.total);
  }
  if (cfg.x > 0) {
    res.baseline = run_condition(strong_train, cfg.x);
  } else {
    res.baseline.n_test = static_cast<int>(test.size());
    res.baseline.unpaired_accuracy = 0.5;  // no training data at all: chance
  }
  return res;
}

// explicit instantiations
template std::vector<LabeledArticle> build_generations<float>(
    const TransformerLM<float>&, const Vocab&, std::span<const ArticleRecord>, double, int,
    const SamplerConfig&, const std::string&, int, std::vector<std::vector<int>>*);
template std::vector<LabeledArticle> build_generations<double>(
    const TransformerLM<double>&, const Vocab&, std::span<const ArticleRecord>, double, int,
    const SamplerConfig&, const std::string&, int, std::vector<std::vector<int>>*);
template TransformerLM<float> train_discriminator<float>(const TransformerLM<float>&, int64_t,
                                                         const Vocab&, const DetectionDataset&,
                                                         const DiscTrainConfig&);
template TransformerLM<double> train_discriminator<double>(const TransformerLM<double>&, int64_t,
                                                           const Vocab&, const DetectionDataset&,
                                                           const DiscTrainConfig&);
template double machine_probability<float>(const TransformerLM<float>&, const Vocab&,
                                           const ArticleRecord&, int);
template double machine_probability<double>(const TransformerLM<double>&, const Vocab&,
                                            const ArticleRecord&, int);
template DetectionReport evaluate_detector<float>(
    const TransformerLM<float>&, const Vocab&, std::span<const LabeledArticle>,
    const std::vector<std::pair<ArticleRecord, ArticleRecord>>*, int, int, uint64_t);
template DetectionReport evaluate_detector<double>(
    const TransformerLM<double>&, const Vocab&, std::span<const LabeledArticle>,
    const std::vector<std::pair<ArticleRecord, ArticleRecord>>*, int, int, uint64_t);
template SweepResult adversarial_p_selection<float>(const TransformerLM<float>&, int64_t,
                                                    const TransformerLM<float>&, int64_t,
                                                    const Vocab&, std::span<const ArticleRecord>,
                                                    std::span<const ArticleRecord>,
                                                    const SweepConfig&);
template SweepResult adversarial_p_selection<double>(const TransformerLM<double>&, int64_t,
                                                     const TransformerLM<double>&, int64_t,
                                                     const Vocab&, std::span<const ArticleRecord>,
                                                     std::span<const ArticleRecord>,
                                                     const SweepConfig&);
template WeakSupResult weak_supervision_run<float>(const TransformerLM<float>&, int64_t,
                                                   const TransformerLM<float>&,
                                                   const TransformerLM<float>&, int64_t,
                                                   const Vocab&, std::span<const ArticleRecord>,
                                                   std::span<const ArticleRecord>,
                                                   const WeakSupRunConfig&);
template WeakSupResult weak_supervision_run<double>(const TransformerLM<double>&, int64_t,
                                                    const TransformerLM<double>&,
                                                    const TransformerLM<double>&, int64_t,
                                                    const Vocab&, std::span<const ArticleRecord>,
                                                    std::span<const ArticleRecord>,
                                                    const WeakSupRunConfig&);

}  // namespace tabloid
