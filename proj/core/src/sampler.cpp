// SPDX-License-Identifier: Apache-2.0
#include "tabloid/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tabloid/decoder.hpp"

namespace tabloid {

Strategy parse_strategy(const std::string& name) {
  if (name == "nucleus") return Strategy::Nucleus;
  if (name == "topk") return Strategy::TopK;
  if (name == "greedy") return Strategy::Greedy;
  throw std::invalid_argument("unknown strategy '" + name + "'");
}

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Nucleus: return "nucleus";
    case Strategy::TopK: return "topk";
    case Strategy::Greedy: return "greedy";
  }
  return "?";
}

namespace {

void check_distribution(std::span<const double> probs) {
  if (probs.empty()) throw std::invalid_argument("empty distribution");
  double sum = std::accumulate(probs.begin(), probs.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-6)
    throw std::invalid_argument("distribution sums to " + std::to_string(sum) + ", not 1");
}

std::vector<int> sorted_indices(std::span<const double> probs) {
  std::vector<int> idx(probs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (probs[a] != probs[b]) return probs[a] > probs[b];
    return a < b;
  });
  return idx;
}

FilteredDist take_prefix(std::span<const double> probs, const std::vector<int>& order,
                         size_t count) {
  FilteredDist out;
  out.ids.assign(order.begin(), order.begin() + count);
  out.probs.resize(count);
  if (count == probs.size()) {
    // identity: keep the distribution's own values
    for (size_t i = 0; i < count; ++i) out.probs[i] = probs[out.ids[i]];
    return out;
  }
  double mass = 0;
  for (size_t i = 0; i < count; ++i) mass += probs[out.ids[i]];
  for (size_t i = 0; i < count; ++i) out.probs[i] = probs[out.ids[i]] / mass;
  return out;
}

}  // namespace

FilteredDist nucleus_filter(std::span<const double> probs, double p) {
  check_distribution(probs);
  if (p <= 0.0 || p > 1.0) throw std::invalid_argument("p must lie in (0, 1]");
  std::vector<int> order = sorted_indices(probs);
  double cum = 0;
  size_t count = order.size();
  for (size_t i = 0; i < order.size(); ++i) {
    cum += probs[order[i]];
    if (cum >= p) {
      count = i + 1;
      break;
    }
  }
  return take_prefix(probs, order, count);
}

FilteredDist top_k_filter(std::span<const double> probs, int k) {
  check_distribution(probs);
  if (k < 1 || static_cast<size_t>(k) > probs.size())
    throw std::invalid_argument("k must lie in [1, vocab size]");
  std::vector<int> order = sorted_indices(probs);
  return take_prefix(probs, order, static_cast<size_t>(k));
}

int sample_token(Rng& rng, const FilteredDist& dist) {
  if (dist.ids.empty()) throw std::invalid_argument("empty filtered distribution");
  double u = rng.uniform01();
  double cum = 0;
  for (size_t i = 0; i < dist.ids.size(); ++i) {
    cum += dist.probs[i];
    if (u < cum) return dist.ids[i];
  }
  return dist.ids.back();
}

FilteredDist apply_strategy(std::span<const double> probs, const SamplerConfig& cfg) {
  switch (cfg.strategy) {
    case Strategy::Nucleus: return nucleus_filter(probs, cfg.p);
    case Strategy::TopK: return top_k_filter(probs, cfg.k);
    case Strategy::Greedy: return top_k_filter(probs, 1);
  }
  throw std::logic_error("unreachable");
}

template <class T>
std::vector<int> generate_field(const TransformerLM<T>& model, std::span<const int> prompt,
                                Field target, const SamplerConfig& cfg, Rng& rng,
                                std::vector<FilteredDist>* trace) {
  if (prompt.empty() || prompt.back() != field_start_id(target))
    throw std::invalid_argument(std::string("prompt must end with the start token for '") +
                                field_name(target) + "'");
  if (cfg.max_new_tokens < 1) throw std::invalid_argument("max_new_tokens must be positive");

  Decoder<T> dec(model);
  const std::vector<T>* logits = &dec.feed(prompt);
  int end_id = field_end_id(target);
  std::vector<int> out;
  for (int i = 0; i < cfg.max_new_tokens; ++i) {
    std::vector<double> probs =
        softmax_logits(std::span<const T>(logits->data(), logits->size()), cfg.temperature);
    FilteredDist dist = apply_strategy(probs, cfg);
    int tok = sample_token(rng, dist);
    if (trace) trace->push_back(std::move(dist));
    out.push_back(tok);
    if (tok == end_id) break;
    if (dec.pos() >= dec.capacity()) break;  // model context exhausted
    logits = &dec.step(tok);
  }
  return out;
}

namespace {

/// Strips a trailing end token, leaving the raw content ids.
std::vector<int> strip_end(std::vector<int> ids, Field f) {
  if (!ids.empty() && ids.back() == field_end_id(f)) ids.pop_back();
  return ids;
}

}  // namespace

template <class T>
GenerationResult generate_article(const TransformerLM<T>& model, const Vocab& vocab,
                                  const ArticleRecord& provided, FieldSet provided_fields,
                                  const SamplerConfig& cfg, const GenerateOptions& opts,
                                  Rng& rng) {
  if ((provided_fields & FieldSet::metadata()).empty())
    throw std::invalid_argument("generate_article requires at least one provided metadata field");
  if (model.config().vocab_size != vocab.size())
    throw std::invalid_argument("model vocab_size " + std::to_string(model.config().vocab_size) +
                                " does not match the tokenizer vocabulary (" +
                                std::to_string(vocab.size()) + ")");

  GenerationResult res;
  res.article.article = provided;
  res.article.label = Label::Machine;
  res.article.generator_id = opts.generator_id;
  res.article.top_p = cfg.strategy == Strategy::Nucleus ? cfg.p : 1.0;
  ArticleRecord& art = res.article.article;

  SamplerConfig meta_cfg = cfg;
  if (opts.metadata_greedy) meta_cfg.strategy = Strategy::Greedy;

  FieldSet have = provided_fields;
  auto generate_one = [&](Field f, FieldSet context, const SamplerConfig& c) {
    std::vector<int> prompt = inference_prompt(vocab, art, context, f);
    std::vector<int> ids = strip_end(generate_field(model, prompt, f, c, rng), f);
    if (ids.empty())
      res.warnings.push_back(std::string("field '") + field_name(f) +
                             "' generation ended with empty content");
    set_field_text(art, f, vocab.decode(ids));
    have.insert(f);
    return ids;
  };

  // a) body from the provided metadata
  if (!have.contains(Field::Body)) {
    res.body_ids = generate_one(Field::Body, have, cfg);
  }

  // b) remaining metadata, canonical order, conditioned on context + body
  for (Field f : canonical_sort(FieldSet::metadata())) {
    if (have.contains(f)) continue;
    FieldSet context = have;
    generate_one(f, context, meta_cfg);
  }

  // c) optionally regenerate the provided headline given everything else
  if (opts.regenerate_headline && provided_fields.contains(Field::Headline)) {
    FieldSet context = have;
    context.erase(Field::Headline);
    generate_one(Field::Headline, context, meta_cfg);
  }

  return res;
}

template std::vector<int> generate_field<float>(const TransformerLM<float>&, std::span<const int>,
                                                Field, const SamplerConfig&, Rng&,
                                                std::vector<FilteredDist>*);
template std::vector<int> generate_field<double>(const TransformerLM<double>&,
                                                 std::span<const int>, Field, const SamplerConfig&,
                                                 Rng&, std::vector<FilteredDist>*);
template GenerationResult generate_article<float>(const TransformerLM<float>&, const Vocab&,
                                                  const ArticleRecord&, FieldSet,
                                                  const SamplerConfig&, const GenerateOptions&,
                                                  Rng&);
template GenerationResult generate_article<double>(const TransformerLM<double>&, const Vocab&,
                                                   const ArticleRecord&, FieldSet,
                                                   const SamplerConfig&, const GenerateOptions&,
                                                   Rng&);

}  // namespace tabloid
