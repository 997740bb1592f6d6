// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tabloid/bpe.hpp"
#include "tabloid/corpus.hpp"
#include "tabloid/fields.hpp"
#include "tabloid/model.hpp"
#include "tabloid/optim.hpp"

namespace tabloid {

struct TrainLmConfig {
  ModelConfig model;
  OptimizerConfig optim;  // Adafactor; total_steps must equal steps
  int steps = 1000;
  int batch_size = 16;
  int max_len = 256;
  DropoutConfig dropout;
  uint64_t seed = 0;
  // Checkpoints written at these fractions of total steps (rounded); the
  // 7/8 entry provides the earlier-checkpoint discriminator init.
  std::vector<double> checkpoint_fracs = {0.875, 1.0};
  std::string checkpoint_dir;  // empty = keep everything in memory
  int log_every = 100;
  bool verbose = true;
};

template <class T>
struct TrainLmResult {
  TransformerLM<T> model;
  std::vector<double> loss_history;            // mean batch loss per step
  std::map<int64_t, std::string> checkpoints;  // step -> file path
};

/// Next-token pretraining over field-partitioned article examples drawn
/// with the configured dropout. One forward/backward per example,
/// gradients averaged over the batch, Adafactor updates on the schedule
/// in cfg.optim. Deterministic given cfg.seed.
template <class T>
TrainLmResult<T> train_lm(const std::vector<ArticleRecord>& articles, const Vocab& vocab,
                          const TrainLmConfig& cfg);

/// Mean next-token loss of field-partitioned examples drawn from held-out
/// articles (one pass, fixed rng).
template <class T>
double eval_lm_loss(TransformerLM<T>& model, const Vocab& vocab,
                    const std::vector<ArticleRecord>& articles, const DropoutConfig& dropout,
                    int max_len, uint64_t seed);

}  // namespace tabloid
