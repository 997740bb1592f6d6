// SPDX-License-Identifier: Apache-2.0
//
// tabloid: synthesize article corpora, train the field-conditioned LM,
// generate articles, train/evaluate detectors, and run the decoding
// analyses. Every subcommand is seeded and writes a manifest next to its
// outputs.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tabloid/analysis.hpp"
#include "tabloid/bpe.hpp"
#include "tabloid/checkpoint.hpp"
#include "tabloid/corpus.hpp"
#include "tabloid/decoder.hpp"
#include "tabloid/detect.hpp"
#include "tabloid/fields.hpp"
#include "tabloid/model.hpp"
#include "tabloid/ngram.hpp"
#include "tabloid/optim.hpp"
#include "tabloid/sampler.hpp"
#include "tabloid/synth.hpp"
#include "tabloid/trainer.hpp"

#ifndef TABLOID_VERSION_STRING
#define TABLOID_VERSION_STRING "v0.0.0-unknown"
#endif

namespace {

using nlohmann::ordered_json;
using namespace tabloid;

namespace fs = std::filesystem;

std::string g_argv_line;
CLI::App* g_app = nullptr;

void write_manifest(const std::string& out_path, uint64_t seed,
                    const std::vector<std::string>& outputs) {
  fs::path p(out_path);
  fs::path manifest = fs::is_directory(p) || p.extension().empty()
                          ? p / "manifest.json"
                          : fs::path(out_path + ".manifest.json");
  if (manifest.has_parent_path()) fs::create_directories(manifest.parent_path());
  ordered_json j;
  j["tool"] = "tabloid";
  j["version"] = TABLOID_VERSION_STRING;
  j["argv"] = g_argv_line;
  j["seed"] = seed;
  j["outputs"] = outputs;
  j["resolved_config"] = g_app ? g_app->config_to_str(true, false) : "";
  std::ofstream out(manifest);
  out << j.dump(2) << '\n';
}

void write_text(const std::string& path, const std::string& text) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
}

std::vector<std::vector<int>> load_ids_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::vector<std::vector<int>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(nlohmann::json::parse(line).get<std::vector<int>>());
  }
  return out;
}

void write_ids_jsonl(const std::vector<std::vector<int>>& ids, const std::string& path) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  for (const auto& row : ids) out << nlohmann::json(row).dump() << '\n';
}

/// Loads the checkpoint with the scalar type recorded in its header and
/// calls fn(model, step).
template <class Fn>
int with_checkpoint(const std::string& path, Fn&& fn) {
  CheckpointInfo info = checkpoint_info(path);
  if (info.dtype == "f32") {
    auto [m, step] = load_checkpoint<float>(path);
    return fn(m, step);
  }
  auto [m, step] = load_checkpoint<double>(path);
  return fn(m, step);
}

Date parse_cutoff(const std::string& s) { return parse_date(s); }

// ---- corpus ---------------------------------------------------------------

struct CorpusSynthOpts {
  int n = 1000;
  uint64_t seed = 0;
  std::string out;
  std::string first_date = "2019-01-01", last_date = "2019-04-30";
  int min_sentences = 4, max_sentences = 8;
};

int run_corpus_synth(const CorpusSynthOpts& o) {
  SynthConfig cfg;
  cfg.n_articles = o.n;
  cfg.seed = o.seed;
  cfg.first_date = parse_date(o.first_date);
  cfg.last_date = parse_date(o.last_date);
  cfg.min_topic_sentences = o.min_sentences;
  cfg.max_topic_sentences = o.max_sentences;
  auto articles = synth_corpus(cfg);
  write_jsonl(articles, o.out);
  write_manifest(o.out, o.seed, {o.out});
  std::printf("wrote %zu articles to %s\n", articles.size(), o.out.c_str());
  return 0;
}

struct CorpusSplitOpts {
  std::string in, cutoff, train_out, eval_out;
};

int run_corpus_split(const CorpusSplitOpts& o) {
  auto articles = load_articles(o.in);
  auto [train, eval] = split_by_date(articles, parse_cutoff(o.cutoff));
  write_jsonl(train, o.train_out);
  write_jsonl(eval, o.eval_out);
  write_manifest(o.train_out, 0, {o.train_out, o.eval_out});
  std::printf("split %zu articles at %s: %zu train, %zu eval\n", articles.size(),
              o.cutoff.c_str(), train.size(), eval.size());
  return 0;
}

int run_corpus_stats(const std::string& in) {
  auto records = load_jsonl(in);
  std::map<std::string, int> domains;
  std::string lo_date, hi_date;
  long human = 0, machine = 0, words = 0;
  for (const auto& r : records) {
    domains[r.article.domain]++;
    (r.label == Label::Human ? human : machine)++;
    if (lo_date.empty() || r.article.date < lo_date) lo_date = r.article.date;
    if (hi_date.empty() || r.article.date > hi_date) hi_date = r.article.date;
    words += static_cast<long>(NgramClassifier::words(r.article.body).size());
  }
  std::printf("records: %zu (%ld human, %ld machine)\n", records.size(), human, machine);
  std::printf("dates: %s .. %s\n", lo_date.c_str(), hi_date.c_str());
  if (!records.empty())
    std::printf("mean body words: %.1f\n", static_cast<double>(words) / records.size());
  for (auto& [d, c] : domains) std::printf("  %-24s %d\n", d.c_str(), c);
  return 0;
}

// ---- tokenizer ------------------------------------------------------------

struct TokTrainOpts {
  std::string in, out;
  int vocab_size = 512;
};

int run_tok_train(const TokTrainOpts& o) {
  auto articles = load_articles(o.in);
  std::vector<std::string> texts;
  texts.reserve(articles.size() * kNumFields);
  for (const auto& a : articles)
    for (int f = 0; f < kNumFields; ++f) texts.push_back(field_text(a, static_cast<Field>(f)));
  Vocab v = train_bpe(texts, o.vocab_size);
  v.save(o.out);
  write_manifest(o.out, 0, {o.out});
  std::printf("trained vocab of size %d (%zu merges) -> %s\n", v.size(), v.merges().size(),
              o.out.c_str());
  return 0;
}

// ---- lm -------------------------------------------------------------------

struct LmTrainOpts {
  std::string corpus, vocab, out;
  std::string preset = "toy-base";
  std::string precision = "f32";
  int steps = 1500, batch = 16, max_len = 256;
  double lr = 2e-3;
  double warmup_frac = 0.05;
  double field_drop = 0.10, body_only = 0.35;
  uint64_t seed = 0;
  std::string eval_corpus;
};

template <class T>
int run_lm_train_t(const LmTrainOpts& o) {
  auto articles = load_articles(o.corpus);
  Vocab vocab = Vocab::load(o.vocab);
  TrainLmConfig cfg;
  cfg.model = ModelConfig::from_preset(o.preset, vocab.size());
  cfg.steps = o.steps;
  cfg.batch_size = o.batch;
  cfg.max_len = o.max_len;
  cfg.dropout = {o.field_drop, o.body_only};
  cfg.seed = o.seed;
  cfg.checkpoint_dir = o.out;
  cfg.optim = OptimizerConfig::adafactor(o.lr, o.steps,
                                         static_cast<int>(o.warmup_frac * o.steps + 0.5));
  auto res = train_lm<T>(articles, vocab, cfg);
  std::vector<std::string> outputs;
  for (auto& [step, path] : res.checkpoints) outputs.push_back(path);
  write_manifest(o.out, o.seed, outputs);
  if (!o.eval_corpus.empty()) {
    auto held = load_articles(o.eval_corpus);
    double l = eval_lm_loss(res.model, vocab, held, cfg.dropout, o.max_len, o.seed + 1);
    std::printf("held-out example loss: %.4f\n", l);
  }
  return 0;
}

int run_lm_train(const LmTrainOpts& o) {
  if (o.precision == "f32") return run_lm_train_t<float>(o);
  if (o.precision == "f64") return run_lm_train_t<double>(o);
  throw CLI::ValidationError("--precision must be f32 or f64");
}

struct LmEvalOpts {
  std::string ckpt, vocab, corpus, out;
  int threads = 1;
};

int run_lm_eval(const LmEvalOpts& o) {
  Vocab vocab = Vocab::load(o.vocab);
  auto articles = load_articles(o.corpus);
  return with_checkpoint(o.ckpt, [&](auto& model, int64_t step) {
    auto cond = body_perplexity(model, vocab, articles, true, o.threads);
    auto uncond = body_perplexity(model, vocab, articles, false, o.threads);
    std::printf("checkpoint step %lld\n", static_cast<long long>(step));
    std::printf("conditional   body ppl: %.4f  (%ld tokens)\n", cond.perplexity, cond.n_tokens);
    std::printf("unconditional body ppl: %.4f  (%ld tokens)\n", uncond.perplexity,
                uncond.n_tokens);
    if (!o.out.empty()) {
      std::vector<PerplexityReport> reports{cond, uncond};
      write_text(o.out + "/ppl.csv", ppl_csv(reports));
      write_manifest(o.out, 0, {o.out + "/ppl.csv"});
    }
    return 0;
  });
}

// ---- generate ---------------------------------------------------------------

struct GenerateOpts {
  std::string ckpt, vocab, out, ids_out;
  std::string fields;  // domain=...,date=...
  std::string strategy = "nucleus";
  double p = 0.96, temperature = 1.0;
  int k = 40, max_new = 192, n = 1;
  uint64_t seed = 0;
  bool regen_headline = false, metadata_greedy = false;
};

ArticleRecord parse_fields_arg(const std::string& arg, FieldSet& provided) {
  ArticleRecord a;
  size_t pos = 0;
  while (pos < arg.size()) {
    size_t next = arg.find(',', pos);
    if (next == std::string::npos) next = arg.size();
    std::string kv = arg.substr(pos, next - pos);
    pos = next + 1;
    if (kv.empty()) continue;
    size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw CLI::ValidationError("--fields entries must look like name=value, got '" + kv + "'");
    std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    bool matched = false;
    for (int f = 0; f < kNumFields; ++f) {
      if (key == field_name(static_cast<Field>(f))) {
        set_field_text(a, static_cast<Field>(f), value);
        provided.insert(static_cast<Field>(f));
        matched = true;
      }
    }
    if (!matched) throw CLI::ValidationError("unknown field '" + key + "'");
  }
  return a;
}

int run_generate(const GenerateOpts& o) {
  Vocab vocab = Vocab::load(o.vocab);
  FieldSet provided;
  ArticleRecord proto = parse_fields_arg(o.fields, provided);
  return with_checkpoint(o.ckpt, [&](auto& model, int64_t) {
    SamplerConfig cfg;
    cfg.strategy = parse_strategy(o.strategy);
    cfg.p = o.p;
    cfg.k = o.k;
    cfg.temperature = o.temperature;
    cfg.max_new_tokens = o.max_new;
    cfg.seed = o.seed;
    GenerateOptions opts;
    opts.regenerate_headline = o.regen_headline;
    opts.metadata_greedy = o.metadata_greedy;
    opts.generator_id = model.config().preset;
    Rng root(o.seed);
    std::vector<LabeledArticle> out;
    std::vector<std::vector<int>> ids;
    for (int i = 0; i < o.n; ++i) {
      Rng rng = root.fork("gen-" + std::to_string(i));
      auto res = generate_article(model, vocab, proto, provided, cfg, opts, rng);
      for (const auto& w : res.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      out.push_back(std::move(res.article));
      ids.push_back(std::move(res.body_ids));
    }
    write_jsonl(out, o.out);
    if (!o.ids_out.empty()) write_ids_jsonl(ids, o.ids_out);
    write_manifest(o.out, o.seed, {o.out});
    std::printf("wrote %d generated article(s) to %s\n", o.n, o.out.c_str());
    return 0;
  });
}

// ---- detect ---------------------------------------------------------------

struct BuildGenOpts {
  std::string ckpt, vocab, sources, out, ids_out;
  double p = 0.96, temperature = 1.0;
  int n = 100, max_new = 192, threads = 1;
  uint64_t seed = 0;
};

int run_build_gen(const BuildGenOpts& o) {
  Vocab vocab = Vocab::load(o.vocab);
  auto sources = load_articles(o.sources);
  return with_checkpoint(o.ckpt, [&](auto& model, int64_t) {
    SamplerConfig cfg;
    cfg.p = o.p;
    cfg.temperature = o.temperature;
    cfg.max_new_tokens = o.max_new;
    cfg.seed = o.seed;
    std::vector<std::vector<int>> ids;
    auto gens = build_generations(model, vocab, sources, o.p, o.n, cfg, model.config().preset,
                                  o.threads, &ids);
    write_jsonl(gens, o.out);
    if (!o.ids_out.empty()) write_ids_jsonl(ids, o.ids_out);
    write_manifest(o.out, o.seed, {o.out});
    std::printf("wrote %d machine article(s) at p=%.2f to %s\n", o.n, o.p, o.out.c_str());
    return 0;
  });
}

struct DetectTrainOpts {
  std::string init_ckpt, vocab, train, out;
  std::string generator_preset;
  int64_t generator_step = 0;
  int epochs = 10, batch = 16, max_len = 256;
  double lr = 3e-4, aux_coeff = 0.5, warmup_frac = 0.2;
  uint64_t seed = 0;
};

int run_detect_train(const DetectTrainOpts& o) {
  Vocab vocab = Vocab::load(o.vocab);
  DetectionDataset data;
  data.split.train = load_jsonl(o.train);
  data.prov = {o.generator_preset, o.generator_step};
  return with_checkpoint(o.init_ckpt, [&](auto& init, int64_t init_step) {
    DiscTrainConfig cfg;
    cfg.lr = o.lr;
    cfg.epochs = o.epochs;
    cfg.batch_size = o.batch;
    cfg.max_len = o.max_len;
    cfg.aux_lm_coeff = o.aux_coeff;
    cfg.warmup_frac = o.warmup_frac;
    cfg.seed = o.seed;
    auto model = train_discriminator(init, init_step, vocab, data, cfg);
    save_checkpoint(model, init_step, o.out);
    write_manifest(o.out, o.seed, {o.out});
    std::printf("wrote discriminator checkpoint to %s\n", o.out.c_str());
    return 0;
  });
}

struct DetectEvalOpts {
  std::string ckpt, vocab, test, pair_sources, report;
  std::string mode = "unpaired";  // unpaired|paired|both
  int max_len = 256, threads = 1;
  uint64_t seed = 0;
};

int run_detect_eval(const DetectEvalOpts& o) {
  Vocab vocab = Vocab::load(o.vocab);
  auto test = load_jsonl(o.test);
  return with_checkpoint(o.ckpt, [&](auto& model, int64_t) {
    std::vector<std::pair<ArticleRecord, ArticleRecord>> pairs;
    const std::vector<std::pair<ArticleRecord, ArticleRecord>>* pairs_ptr = nullptr;
    if (o.mode != "unpaired") {
      if (o.pair_sources.empty())
        throw CLI::ValidationError("paired evaluation requires --pair-sources");
      auto sources = load_articles(o.pair_sources);
      pairs = pair_by_metadata(test, sources);
      pairs_ptr = &pairs;
    }
    DetectionReport rep =
        evaluate_detector(model, vocab, test, pairs_ptr, o.max_len, o.threads, o.seed);
    if (o.mode != "paired")
      std::printf("unpaired accuracy: %.4f  (n=%d)\n", rep.unpaired_accuracy, rep.n_test);
    if (pairs_ptr)
      std::printf("paired accuracy:   %.4f  (%zu pairs)\n", rep.paired_accuracy, pairs.size());
    if (!o.report.empty()) {
      write_text(o.report, rep.to_json() + "\n");
      write_manifest(o.report, o.seed, {o.report});
    }
    return 0;
  });
}

struct DetectSweepOpts {
  std::string gen_ckpt, disc_init_ckpt, vocab, sources, humans, out;
  std::string grid = "0.90,0.92,0.94,0.96,0.98,1.00";
  int n_per_label = 200, epochs = 6, batch = 16, max_len = 256, max_new = 192, threads = 1;
  double lr = 3e-4;
  uint64_t seed = 0;
};

std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> out;
  size_t pos = 0;
  while (pos < s.size()) {
    size_t next = s.find(',', pos);
    if (next == std::string::npos) next = s.size();
    out.push_back(std::stod(s.substr(pos, next - pos)));
    pos = next + 1;
  }
  return out;
}

int run_detect_sweep(const DetectSweepOpts& o) {
  Vocab vocab = Vocab::load(o.vocab);
  auto sources = load_articles(o.sources);
  auto humans = load_articles(o.humans);
  CheckpointInfo gen_info = checkpoint_info(o.gen_ckpt);
  auto run = [&](auto tag) -> int {
    using T = decltype(tag);
    auto [gen, gen_step] = load_checkpoint<T>(o.gen_ckpt);
    auto [init, init_step] = load_checkpoint<T>(o.disc_init_ckpt);
    SweepConfig cfg;
    cfg.grid = parse_grid(o.grid);
    cfg.n_per_label = o.n_per_label;
    cfg.disc.epochs = o.epochs;
    cfg.disc.batch_size = o.batch;
    cfg.disc.max_len = o.max_len;
    cfg.disc.lr = o.lr;
    cfg.gen.max_new_tokens = o.max_new;
    cfg.threads = o.threads;
    cfg.seed = o.seed;
    SweepResult res =
        adversarial_p_selection(gen, gen_step, init, init_step, vocab, sources, humans, cfg);
    std::map<double, DetectionReport> by_p;
    ordered_json points = ordered_json::array();
    for (auto& pt : res.points) {
      by_p[pt.p] = pt.test;
      ordered_json pj;
      pj["p"] = pt.p;
      pj["val_unpaired"] = pt.val_unpaired;
      pj["test"] = nlohmann::json::parse(pt.test.to_json());
      points.push_back(pj);
    }
    write_text(o.out + "/sweep.csv", sweep_report(by_p));
    ordered_json summary;
    summary["chosen_p"] = res.chosen_p;
    summary["points"] = points;
    write_text(o.out + "/sweep.json", summary.dump(2) + "\n");
    write_manifest(o.out, o.seed, {o.out + "/sweep.csv", o.out + "/sweep.json"});
    std::printf("adversarial p: %.2f\n", res.chosen_p);
    return 0;
  };
  return gen_info.dtype == "f32" ? run(float{}) : run(double{});
}

struct WeaksupOpts {
  std::string strong_ckpt, weak_ckpt, disc_init_ckpt, vocab, sources, humans, out;
  int x = 32, total = 512, n_eval = 400;
  int epochs = 6, batch = 16, max_len = 256, max_new = 192, threads = 1;
  double lr = 3e-4, strong_p = 0.96;
  uint64_t seed = 0;
};

// ---- analyze ----------------------------------------------------------------

struct AnalyzePplOpts {
  std::string ckpt, vocab, corpus, out;
  int threads = 1;
};

int run_analyze_ppl(const AnalyzePplOpts& o) {
  LmEvalOpts e;
  e.ckpt = o.ckpt;
  e.vocab = o.vocab;
  e.corpus = o.corpus;
  e.out = o.out;
  e.threads = o.threads;
  return run_lm_eval(e);
}

struct AnalyzePplByPosOpts {
  std::string ckpt, vocab, human, machine, machine_ids, out;
  std::string machine_label = "generated";
  int threads = 1;
};

int run_analyze_ppl_by_pos(const AnalyzePplByPosOpts& o) {
  Vocab vocab = Vocab::load(o.vocab);
  auto human = load_articles(o.human);
  return with_checkpoint(o.ckpt, [&](auto& model, int64_t) {
    std::vector<PositionCurve> curves;
    auto human_texts = scored_texts_from_articles(vocab, human);
    curves.push_back(perplexity_by_position(model, vocab, human_texts, "human", o.threads));
    if (!o.machine.empty()) {
      auto machine = load_articles(o.machine);
      std::vector<ScoredText> texts;
      if (!o.machine_ids.empty()) {
        auto ids = load_ids_jsonl(o.machine_ids);
        if (ids.size() != machine.size())
          throw std::runtime_error("--machine-ids row count does not match the machine corpus");
        texts.resize(machine.size());
        for (size_t i = 0; i < machine.size(); ++i)
          texts[i] = {&machine[i], std::move(ids[i])};
      } else {
        texts = scored_texts_from_articles(vocab, machine);
      }
      curves.push_back(perplexity_by_position(model, vocab, texts, o.machine_label, o.threads));
    }
    write_text(o.out + "/ppl_by_pos.csv", ppl_by_pos_csv(curves));
    write_manifest(o.out, 0, {o.out + "/ppl_by_pos.csv"});
    std::printf("wrote %s/ppl_by_pos.csv\n", o.out.c_str());
    return 0;
  });
}

struct AnalyzeTailOpts {
  std::string ckpt, vocab, corpus, ids, out;
  double p = 0.96, temperature = 1.0;
  int threads = 1;
};

int run_analyze_tail(const AnalyzeTailOpts& o) {
  Vocab vocab = Vocab::load(o.vocab);
  auto articles = load_articles(o.corpus);
  return with_checkpoint(o.ckpt, [&](auto& model, int64_t) {
    std::vector<ScoredText> texts;
    if (!o.ids.empty()) {
      auto ids = load_ids_jsonl(o.ids);
      if (ids.size() != articles.size())
        throw std::runtime_error("--ids row count does not match the corpus");
      texts.resize(articles.size());
      for (size_t i = 0; i < articles.size(); ++i) texts[i] = {&articles[i], std::move(ids[i])};
    } else {
      texts = scored_texts_from_articles(vocab, articles);
    }
    double frac = tail_occupancy(model, vocab, texts, o.p, o.temperature, o.threads);
    std::printf("tail occupancy at p=%.2f: %.6f\n", o.p, frac);
    if (!o.out.empty()) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "p,fraction\n%.2f,%.6f\n", o.p, frac);
      write_text(o.out + "/tail.csv", buf);
      write_manifest(o.out, 0, {o.out + "/tail.csv"});
    }
    return 0;
  });
}

}  // namespace

int run_detect_weaksup_impl(const WeaksupOpts& o);

int main(int argc, char** argv) {
  for (int i = 0; i < argc; ++i) {
    if (i) g_argv_line += ' ';
    g_argv_line += argv[i];
  }

  CLI::App app{"field-conditioned news LM and machine-text detection workbench"};
  g_app = &app;
  app.set_version_flag("--version", TABLOID_VERSION_STRING);
  app.set_config("--config", "", "key=value config file (flags take precedence)");
  app.require_subcommand(1);
  std::function<int()> action;

  // corpus
  auto* corpus = app.add_subcommand("corpus", "corpus synthesis and management");
  corpus->require_subcommand(1);
  {
    auto o = std::make_shared<CorpusSynthOpts>();
    auto* c = corpus->add_subcommand("synth", "generate a synthetic article corpus");
    c->add_option("--n", o->n, "number of articles")->check(CLI::NonNegativeNumber);
    c->add_option("--seed", o->seed, "rng seed");
    c->add_option("--out", o->out, "output JSONL path")->required();
    c->add_option("--first-date", o->first_date);
    c->add_option("--last-date", o->last_date);
    c->add_option("--min-sentences", o->min_sentences);
    c->add_option("--max-sentences", o->max_sentences);
    c->callback([&action, o] { action = [o] { return run_corpus_synth(*o); }; });
  }
  {
    auto o = std::make_shared<CorpusSplitOpts>();
    auto* c = corpus->add_subcommand("split", "partition a corpus by publication date");
    c->add_option("--in", o->in)->required();
    c->add_option("--cutoff", o->cutoff, "YYYY-MM-DD; on/after goes to the eval pool")->required();
    c->add_option("--train-out", o->train_out)->required();
    c->add_option("--eval-out", o->eval_out)->required();
    c->callback([&action, o] { action = [o] { return run_corpus_split(*o); }; });
  }
  {
    auto in = std::make_shared<std::string>();
    auto* c = corpus->add_subcommand("stats", "print corpus statistics");
    c->add_option("--in", *in)->required();
    c->callback([&action, in] { action = [in] { return run_corpus_stats(*in); }; });
  }

  // tok
  auto* tok = app.add_subcommand("tok", "tokenizer");
  tok->require_subcommand(1);
  {
    auto o = std::make_shared<TokTrainOpts>();
    auto* c = tok->add_subcommand("train", "train the byte-level BPE vocabulary");
    c->add_option("--in", o->in, "training corpus JSONL")->required();
    c->add_option("--vocab-size", o->vocab_size);
    c->add_option("--out", o->out, "vocabulary JSON path")->required();
    c->callback([&action, o] { action = [o] { return run_tok_train(*o); }; });
  }

  // lm
  auto* lm = app.add_subcommand("lm", "language model training and evaluation");
  lm->require_subcommand(1);
  {
    auto o = std::make_shared<LmTrainOpts>();
    auto* c = lm->add_subcommand("train", "pretrain a generator");
    c->add_option("--corpus", o->corpus)->required();
    c->add_option("--vocab", o->vocab)->required();
    c->add_option("--out", o->out, "checkpoint directory")->required();
    c->add_option("--preset", o->preset, "toy-base|toy-large|toy-mega");
    c->add_option("--precision", o->precision, "f32|f64");
    c->add_option("--steps", o->steps);
    c->add_option("--batch", o->batch);
    c->add_option("--max-len", o->max_len);
    c->add_option("--lr", o->lr);
    c->add_option("--warmup-frac", o->warmup_frac);
    c->add_option("--field-drop", o->field_drop);
    c->add_option("--body-only", o->body_only);
    c->add_option("--seed", o->seed);
    c->add_option("--eval-corpus", o->eval_corpus);
    c->callback([&action, o] { action = [o] { return run_lm_train(*o); }; });
  }
  {
    auto o = std::make_shared<LmEvalOpts>();
    auto* c = lm->add_subcommand("eval", "conditional/unconditional body perplexity");
    c->add_option("--ckpt", o->ckpt)->required();
    c->add_option("--vocab", o->vocab)->required();
    c->add_option("--corpus", o->corpus)->required();
    c->add_option("--out", o->out, "optional output directory for ppl.csv");
    c->add_option("--threads", o->threads);
    c->callback([&action, o] { action = [o] { return run_lm_eval(*o); }; });
  }

  // generate
  {
    auto o = std::make_shared<GenerateOpts>();
    auto* c = app.add_subcommand("generate", "generate articles from provided fields");
    c->add_option("--ckpt", o->ckpt)->required();
    c->add_option("--vocab", o->vocab)->required();
    c->add_option("--fields", o->fields, "comma-separated name=value field list")->required();
    c->add_option("--out", o->out)->required();
    c->add_option("--ids-out", o->ids_out, "body token-id sidecar JSONL");
    c->add_option("--p", o->p);
    c->add_option("--k", o->k);
    c->add_option("--strategy", o->strategy, "nucleus|topk|greedy");
    c->add_option("--temperature", o->temperature);
    c->add_option("--max-new", o->max_new);
    c->add_option("--n", o->n, "articles to generate");
    c->add_option("--seed", o->seed);
    c->add_flag("--regen-headline", o->regen_headline, "rewrite the provided headline last");
    c->add_flag("--metadata-greedy", o->metadata_greedy, "greedy decoding for metadata fields");
    c->callback([&action, o] { action = [o] { return run_generate(*o); }; });
  }

  // detect
  auto* detect = app.add_subcommand("detect", "machine-text detection");
  detect->require_subcommand(1);
  {
    auto o = std::make_shared<BuildGenOpts>();
    auto* c = detect->add_subcommand("build-gen", "generate machine bodies for source metadata");
    c->add_option("--ckpt", o->ckpt)->required();
    c->add_option("--vocab", o->vocab)->required();
    c->add_option("--sources", o->sources)->required();
    c->add_option("--out", o->out)->required();
    c->add_option("--ids-out", o->ids_out);
    c->add_option("--p", o->p);
    c->add_option("--temperature", o->temperature);
    c->add_option("--n", o->n)->required();
    c->add_option("--max-new", o->max_new);
    c->add_option("--threads", o->threads);
    c->add_option("--seed", o->seed);
    c->callback([&action, o] { action = [o] { return run_build_gen(*o); }; });
  }
  {
    auto o = std::make_shared<DetectTrainOpts>();
    auto* c = detect->add_subcommand("train", "finetune a discriminator");
    c->add_option("--init-ckpt", o->init_ckpt, "earlier-step LM checkpoint")->required();
    c->add_option("--vocab", o->vocab)->required();
    c->add_option("--train", o->train, "labeled train JSONL")->required();
    c->add_option("--out", o->out)->required();
    c->add_option("--generator-preset", o->generator_preset);
    c->add_option("--generator-step", o->generator_step);
    c->add_option("--epochs", o->epochs);
    c->add_option("--batch", o->batch);
    c->add_option("--max-len", o->max_len);
    c->add_option("--lr", o->lr);
    c->add_option("--aux-coeff", o->aux_coeff);
    c->add_option("--warmup-frac", o->warmup_frac);
    c->add_option("--seed", o->seed);
    c->callback([&action, o] { action = [o] { return run_detect_train(*o); }; });
  }
  {
    auto o = std::make_shared<DetectEvalOpts>();
    auto* c = detect->add_subcommand("eval", "evaluate a discriminator");
    c->add_option("--ckpt", o->ckpt)->required();
    c->add_option("--vocab", o->vocab)->required();
    c->add_option("--test", o->test, "labeled test JSONL")->required();
    c->add_option("--mode", o->mode, "unpaired|paired|both");
    c->add_option("--pair-sources", o->pair_sources, "human articles sharing machine metadata");
    c->add_option("--report", o->report, "write the DetectionReport JSON here");
    c->add_option("--max-len", o->max_len);
    c->add_option("--threads", o->threads);
    c->add_option("--seed", o->seed);
    c->callback([&action, o] { action = [o] { return run_detect_eval(*o); }; });
  }
  {
    auto o = std::make_shared<DetectSweepOpts>();
    auto* c = detect->add_subcommand("sweep", "adversarial top-p selection");
    c->add_option("--gen-ckpt", o->gen_ckpt)->required();
    c->add_option("--disc-init-ckpt", o->disc_init_ckpt)->required();
    c->add_option("--vocab", o->vocab)->required();
    c->add_option("--sources", o->sources, "metadata sources for machine articles")->required();
    c->add_option("--humans", o->humans, "disjoint human article pool")->required();
    c->add_option("--out", o->out)->required();
    c->add_option("--grid", o->grid);
    c->add_option("--n-per-label", o->n_per_label);
    c->add_option("--epochs", o->epochs);
    c->add_option("--batch", o->batch);
    c->add_option("--max-len", o->max_len);
    c->add_option("--max-new", o->max_new);
    c->add_option("--lr", o->lr);
    c->add_option("--threads", o->threads);
    c->add_option("--seed", o->seed);
    c->callback([&action, o] { action = [o] { return run_detect_sweep(*o); }; });
  }
  {
    auto o = std::make_shared<WeaksupOpts>();
    auto* c = detect->add_subcommand("weaksup", "weak supervision experiment");
    c->add_option("--strong-ckpt", o->strong_ckpt)->required();
    c->add_option("--weak-ckpt", o->weak_ckpt)->required();
    c->add_option("--disc-init-ckpt", o->disc_init_ckpt)->required();
    c->add_option("--vocab", o->vocab)->required();
    c->add_option("--sources", o->sources)->required();
    c->add_option("--humans", o->humans)->required();
    c->add_option("--out", o->out)->required();
    c->add_option("--x", o->x, "strong-generator training articles");
    c->add_option("--total", o->total, "machine training set size");
    c->add_option("--n-eval", o->n_eval);
    c->add_option("--strong-p", o->strong_p);
    c->add_option("--epochs", o->epochs);
    c->add_option("--batch", o->batch);
    c->add_option("--max-len", o->max_len);
    c->add_option("--max-new", o->max_new);
    c->add_option("--lr", o->lr);
    c->add_option("--threads", o->threads);
    c->add_option("--seed", o->seed);
    c->callback([&action, o] { action = [o] { return run_detect_weaksup_impl(*o); }; });
  }

  // analyze
  auto* analyze = app.add_subcommand("analyze", "decoding-artifact analyses");
  analyze->require_subcommand(1);
  {
    auto o = std::make_shared<AnalyzePplOpts>();
    auto* c = analyze->add_subcommand("ppl", "body perplexity (ppl.csv)");
    c->add_option("--ckpt", o->ckpt)->required();
    c->add_option("--vocab", o->vocab)->required();
    c->add_option("--corpus", o->corpus)->required();
    c->add_option("--out", o->out)->required();
    c->add_option("--threads", o->threads);
    c->callback([&action, o] { action = [o] { return run_analyze_ppl(*o); }; });
  }
  {
    auto o = std::make_shared<AnalyzePplByPosOpts>();
    auto* c = analyze->add_subcommand("ppl-by-pos", "per-position body NLL curves");
    c->add_option("--ckpt", o->ckpt)->required();
    c->add_option("--vocab", o->vocab)->required();
    c->add_option("--human", o->human, "human articles JSONL")->required();
    c->add_option("--machine", o->machine, "machine articles JSONL");
    c->add_option("--machine-ids", o->machine_ids, "token-id sidecar for --machine");
    c->add_option("--machine-label", o->machine_label, "curve label for --machine");
    c->add_option("--out", o->out)->required();
    c->add_option("--threads", o->threads);
    c->callback([&action, o] { action = [o] { return run_analyze_ppl_by_pos(*o); }; });
  }
  {
    auto o = std::make_shared<AnalyzeTailOpts>();
    auto* c = analyze->add_subcommand("tail", "out-of-nucleus token fraction");
    c->add_option("--ckpt", o->ckpt)->required();
    c->add_option("--vocab", o->vocab)->required();
    c->add_option("--corpus", o->corpus)->required();
    c->add_option("--ids", o->ids, "token-id sidecar (exact replay of generations)");
    c->add_option("--p", o->p);
    c->add_option("--temperature", o->temperature);
    c->add_option("--out", o->out);
    c->add_option("--threads", o->threads);
    c->callback([&action, o] { action = [o] { return run_analyze_tail(*o); }; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    return action ? action() : 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

// Out-of-line so the subcommand table above stays readable.
int run_detect_weaksup_impl(const WeaksupOpts& o) {
  Vocab vocab = Vocab::load(o.vocab);
  auto sources = load_articles(o.sources);
  auto humans = load_articles(o.humans);
  CheckpointInfo strong_info = checkpoint_info(o.strong_ckpt);
  auto run = [&](auto tag) -> int {
    using T = decltype(tag);
    auto [strong, strong_step] = load_checkpoint<T>(o.strong_ckpt);
    auto [weak, weak_step] = load_checkpoint<T>(o.weak_ckpt);
    auto [init, init_step] = load_checkpoint<T>(o.disc_init_ckpt);
    (void)weak_step;
    WeakSupRunConfig cfg;
    cfg.x = o.x;
    cfg.total = o.total;
    cfg.n_eval_per_label = o.n_eval;
    cfg.strong_p = o.strong_p;
    cfg.disc.epochs = o.epochs;
    cfg.disc.batch_size = o.batch;
    cfg.disc.max_len = o.max_len;
    cfg.disc.lr = o.lr;
    cfg.gen.max_new_tokens = o.max_new;
    cfg.threads = o.threads;
    cfg.seed = o.seed;
    WeakSupResult res =
        weak_supervision_run(strong, strong_step, weak, init, init_step, vocab, sources, humans,
                             cfg);
    ordered_json j;
    j["x"] = res.x;
    j["with_weak"] = nlohmann::json::parse(res.with_weak.to_json());
    j["baseline"] = nlohmann::json::parse(res.baseline.to_json());
    write_text(o.out + "/weaksup.json", j.dump(2) + "\n");
    write_manifest(o.out, o.seed, {o.out + "/weaksup.json"});
    std::printf("x=%d  with-weak %.4f  baseline %.4f\n", res.x,
                res.with_weak.unpaired_accuracy, res.baseline.unpaired_accuracy);
    return 0;
  };
  return strong_info.dtype == "f32" ? run(float{}) : run(double{});
}
