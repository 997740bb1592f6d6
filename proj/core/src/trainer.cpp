// SPDX-License-Identifier: Apache-2.0
#include "tabloid/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "tabloid/checkpoint.hpp"

namespace tabloid {

namespace {

/// Next-token targets and mask for one example: row i predicts ids[i+1];
/// the final row has no target.
void targets_for(const EncodedExample& ex, std::vector<int>& targets,
                 std::vector<uint8_t>& mask) {
  size_t n = ex.input_ids.size();
  targets.assign(n, 0);
  mask.assign(n, 0);
  for (size_t i = 0; i + 1 < n; ++i) {
    targets[i] = ex.input_ids[i + 1];
    mask[i] = ex.loss_mask[i + 1];
  }
}

}  // namespace

template <class T>
TrainLmResult<T> train_lm(const std::vector<ArticleRecord>& articles, const Vocab& vocab,
                          const TrainLmConfig& cfg) {
  if (articles.empty()) throw std::invalid_argument("train_lm: empty corpus");
  if (cfg.optim.total_steps != cfg.steps)
    throw std::invalid_argument("train_lm: optim.total_steps must equal cfg.steps");
  if (cfg.model.vocab_size != vocab.size())
    throw std::invalid_argument("train_lm: model vocab_size does not match the vocabulary");

  Rng root(cfg.seed);
  TrainLmResult<T> res{TransformerLM<T>(cfg.model), {}, {}};
  TransformerLM<T>& model = res.model;
  model.init(root.fork("init").bits());

  std::vector<ArticleTokens> toks(articles.size());
  for (size_t i = 0; i < articles.size(); ++i) toks[i] = tokenize_fields(vocab, articles[i]);

  // checkpoint step set
  std::map<int64_t, bool> ckpt_steps;
  for (double f : cfg.checkpoint_fracs) {
    auto s = static_cast<int64_t>(f * cfg.steps + 0.5);
    if (s >= 1 && s <= cfg.steps) ckpt_steps[s] = true;
  }
  if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);

  Adafactor<T> optimizer(cfg.optim);
  auto params = model.params();
  Acts<T> acts;
  Tensor<T> dlogits;
  std::vector<int> targets;
  std::vector<uint8_t> mask;

  Rng order_rng = root.fork("order");
  Rng plan_rng = root.fork("plan");
  std::vector<size_t> order(articles.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  order_rng.shuffle(order);
  size_t cursor = 0;

  auto t_start = std::chrono::steady_clock::now();
  for (int step = 0; step < cfg.steps; ++step) {
    model.zero_grad();
    double batch_loss = 0;
    int used = 0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        order_rng.shuffle(order);
        cursor = 0;
      }
      const ArticleTokens& at = toks[order[cursor++]];
      ExamplePlan plan = plan_training_example(FieldSet::all(), plan_rng, cfg.dropout);
      EncodedExample ex = build_training_example(at, plan, cfg.max_len);
      if (ex.input_ids.size() < 2) continue;
      targets_for(ex, targets, mask);
      model.forward(ex.input_ids, acts);
      batch_loss +=
          lm_loss_and_grad(acts.logits, targets, mask, 1.0 / cfg.batch_size, dlogits);
      model.backward(acts, dlogits);
      ++used;
    }
    if (used == 0) throw std::runtime_error("train_lm: batch produced no usable examples");
    optimizer.step(params, step);
    res.loss_history.push_back(batch_loss / used);

    if (cfg.verbose && ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps)) {
      double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
      std::printf("[lm] step %d/%d  loss %.4f  lr %.3e  (%.0fs)\n", step + 1, cfg.steps,
                  res.loss_history.back(), cfg.optim.lr_at(step), secs);
      std::fflush(stdout);
    }

    int64_t done = step + 1;
    if (ckpt_steps.count(done) && !cfg.checkpoint_dir.empty()) {
      std::string path = cfg.checkpoint_dir + "/ckpt-" + std::to_string(done) + ".tbl";
      save_checkpoint(model, done, path);
      res.checkpoints[done] = path;
    }
  }
  return res;
}

template <class T>
double eval_lm_loss(TransformerLM<T>& model, const Vocab& vocab,
                    const std::vector<ArticleRecord>& articles, const DropoutConfig& dropout,
                    int max_len, uint64_t seed) {
  if (articles.empty()) throw std::invalid_argument("eval_lm_loss: empty corpus");
  Rng rng(seed);
  Acts<T> acts;
  std::vector<int> targets;
  std::vector<uint8_t> mask;
  double total = 0;
  int used = 0;
  for (const auto& a : articles) {
    ArticleTokens at = tokenize_fields(vocab, a);
    ExamplePlan plan = plan_training_example(FieldSet::all(), rng, dropout);
    EncodedExample ex = build_training_example(at, plan, max_len);
    if (ex.input_ids.size() < 2) continue;
    targets_for(ex, targets, mask);
    model.forward(ex.input_ids, acts);
    total += lm_loss(acts.logits, targets, mask);
    ++used;
  }
  if (used == 0) throw std::runtime_error("eval_lm_loss: no usable examples");
  return total / used;
}

template TrainLmResult<float> train_lm<float>(const std::vector<ArticleRecord>&, const Vocab&,
                                              const TrainLmConfig&);
template TrainLmResult<double> train_lm<double>(const std::vector<ArticleRecord>&, const Vocab&,
                                                const TrainLmConfig&);
template double eval_lm_loss<float>(TransformerLM<float>&, const Vocab&,
                                    const std::vector<ArticleRecord>&, const DropoutConfig&, int,
                                    uint64_t);
template double eval_lm_loss<double>(TransformerLM<double>&, const Vocab&,
                                     const std::vector<ArticleRecord>&, const DropoutConfig&, int,
                                     uint64_t);

}  // namespace tabloid
