// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tabloid/corpus.hpp"
#include "tabloid/model.hpp"
#include "tabloid/sampler.hpp"

namespace tabloid {

struct DetectionProvenance {
  std::string generator_preset;  // empty = unknown
  int64_t generator_step = 0;
};

struct DetectionDataset {
  CorpusSplit split;
  DetectionProvenance prov;
};

struct DetectionReport {
  double unpaired_accuracy = 0;
  double paired_accuracy = -1;  // -1 = no paired evaluation ran
  // Per top-p threshold: fraction of that threshold's Machine test
  // articles classified Machine.
  std::map<double, double> per_p_machine_recall;
  int n_test = 0;
  uint64_t seed = 0;

  std::string to_json() const;
};

struct DiscTrainConfig {
  double lr = 3e-4;
  int epochs = 10;
  int batch_size = 16;
  int max_len = 256;          // article tokens + CLS
  double aux_lm_coeff = 0.5;  // auxiliary next-token loss weight
  double warmup_frac = 0.2;   // linear warmup over the first 20% of steps
  uint64_t seed = 0;
  bool verbose = true;
};

/// Discriminator input: all five field blocks in canonical order,
/// truncated to max_len - 1, then the CLS token.
std::vector<int> detect_input_ids(const Vocab& vocab, const ArticleRecord& a, int max_len);

/// Replaces each source article's body with a generation conditioned on
/// its full metadata (nucleus sampling at threshold p); metadata is kept
/// verbatim and the result is labeled Machine. `ids_out`, when non-null,
/// receives the raw generated body token ids per article (needed for
/// exact nucleus-membership analysis).
template <class T>
std::vector<LabeledArticle> build_generations(const TransformerLM<T>& model, const Vocab& vocab,
                                              std::span<const ArticleRecord> sources, double p,
                                              int n, const SamplerConfig& cfg,
                                              const std::string& generator_id, int threads,
                                              std::vector<std::vector<int>>* ids_out = nullptr);

/// Finetunes a copy of `init` to classify Human/Machine: detection
/// cross-entropy plus aux_lm_coeff times the next-token loss, Adam with
/// linear warmup over the first warmup_frac of steps. Requires a balanced
/// train split, and an init checkpoint strictly earlier than the
/// generator's when both share a preset.
template <class T>
TransformerLM<T> train_discriminator(const TransformerLM<T>& init, int64_t init_step,
                                     const Vocab& vocab, const DetectionDataset& data,
                                     const DiscTrainConfig& cfg);

/// P(Machine) from the detection head.
template <class T>
double machine_probability(const TransformerLM<T>& model, const Vocab& vocab,
                           const ArticleRecord& a, int max_len);

using MachineScorer = std::function<double(const ArticleRecord&)>;

/// Per-article argmax accuracy; exact-tie scores (P = 0.5) count 0.5.
double unpaired_accuracy(const MachineScorer& scorer, std::span<const LabeledArticle> test);

/// Fraction of (human, machine) pairs where the machine article gets the
/// higher machine probability; exact ties count 0.5.
double paired_accuracy(const MachineScorer& scorer,
                       std::span<const std::pair<ArticleRecord, ArticleRecord>> pairs);

/// Matches each Machine article to the human article sharing its
/// (domain, date, authors, headline); returns (human, machine) pairs.
/// Throws if any machine article has no metadata match.
std::vector<std::pair<ArticleRecord, ArticleRecord>> pair_by_metadata(
    std::span<const LabeledArticle> machine, std::span<const ArticleRecord> human_sources);

/// Scores the test articles (and pairs, when given) with the model's
/// detection head.
template <class T>
DetectionReport evaluate_detector(const TransformerLM<T>& model, const Vocab& vocab,
                                  std::span<const LabeledArticle> test,
                                  const std::vector<std::pair<ArticleRecord, ArticleRecord>>* pairs,
                                  int max_len, int threads, uint64_t seed);

// ---- experiment drivers ---------------------------------------------------

struct SweepConfig {
  std::vector<double> grid = {0.90, 0.92, 0.94, 0.96, 0.98, 1.00};
  int n_per_label = 200;  // dataset pool per label at each grid point
  SplitRatio ratio;
  DiscTrainConfig disc;
  SamplerConfig gen;
  int threads = 1;
  uint64_t seed = 0;
};

struct SweepPointReport {
  double p = 0;
  double val_unpaired = 0;
  DetectionReport test;
};

struct SweepResult {
  double chosen_p = 0;  // grid argmin of validation accuracy (ties: smallest p)
  std::vector<SweepPointReport> points;
};

/// For each grid p: generate a dataset, train a fresh discriminator from
/// `disc_init`, and measure validation accuracy; reports test accuracy at
/// the adversarial (lowest-validation-accuracy) threshold.
template <class T>
SweepResult adversarial_p_selection(const TransformerLM<T>& generator, int64_t generator_step,
                                    const TransformerLM<T>& disc_init, int64_t disc_init_step,
                                    const Vocab& vocab,
                                    std::span<const ArticleRecord> machine_sources,
                                    std::span<const ArticleRecord> human_pool,
                                    const SweepConfig& cfg);

struct WeakSupRunConfig {
  int x = 32;             // strong-generator training articles
  int total = 512;        // machine training set size
  double p_lo = 0.90, p_hi = 1.00;  // weak generations draw p ~ U[p_lo, p_hi]
  double strong_p = 0.96;           // the adversary's (unknown) threshold
  int n_eval_per_label = 400;
  DiscTrainConfig disc;
  SamplerConfig gen;
  int threads = 1;
  uint64_t seed = 0;
};

struct WeakSupResult {
  int x = 0;
  DetectionReport with_weak;  // x strong + (total - x) weak articles
  DetectionReport baseline;   // the x strong articles only
};

/// §-style weak supervision: pad a small strong-generator training set
/// with weak-generator articles; evaluation always runs against held-out
/// strong-generator generations.
template <class T>
WeakSupResult weak_supervision_run(const TransformerLM<T>& strong_gen, int64_t strong_step,
                                   const TransformerLM<T>& weak_gen,
                                   const TransformerLM<T>& disc_init, int64_t disc_init_step,
                                   const Vocab& vocab, std::span<const ArticleRecord> sources,
                                   std::span<const ArticleRecord> human_pool,
                                   const WeakSupRunConfig& cfg);

}  // namespace tabloid
