// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tabloid/fields.hpp"
#include "tabloid/model.hpp"
#include "tabloid/rng.hpp"

namespace tabloid {

enum class Strategy { Nucleus, TopK, Greedy };

Strategy parse_strategy(const std::string& name);
const char* strategy_name(Strategy s);

struct SamplerConfig {
  Strategy strategy = Strategy::Nucleus;
  double p = 0.96;        // nucleus threshold
  int k = 40;             // top-k cutoff
  double temperature = 1.0;
  int max_new_tokens = 192;
  uint64_t seed = 0;
};

/// A filtered next-token distribution: kept ids ordered by descending
/// probability (ties by ascending id) with renormalized probabilities.
struct FilteredDist {
  std::vector<int> ids;
  std::vector<double> probs;

  bool contains(int id) const {
    for (int x : ids)
      if (x == id) return true;
    return false;
  }
};

/// Keeps the smallest probability-sorted prefix whose cumulative mass
/// reaches p (inclusive comparison, so the kept set is never empty).
/// When everything is kept the distribution is returned unchanged.
FilteredDist nucleus_filter(std::span<const double> probs, double p);

/// Keeps the k most probable tokens. 1 <= k <= vocab size.
FilteredDist top_k_filter(std::span<const double> probs, int k);

/// Inverse-CDF draw over the kept set.
int sample_token(Rng& rng, const FilteredDist& dist);

/// Applies the configured strategy (greedy = top-k with k = 1).
/// Temperature is already folded into `probs` by the caller.
FilteredDist apply_strategy(std::span<const double> probs, const SamplerConfig& cfg);

/// Autoregressive sampling until the first <|end-target|> (included in the
/// output) or max_new_tokens, whichever comes first. The prompt must end
/// with <|start-target|>. When `trace` is non-null it receives the kept
/// set of every step.
template <class T>
std::vector<int> generate_field(const TransformerLM<T>& model, std::span<const int> prompt,
                                Field target, const SamplerConfig& cfg, Rng& rng,
                                std::vector<FilteredDist>* trace = nullptr);

struct GenerateOptions {
  bool regenerate_headline = false;  // rewrite a provided headline last
  bool metadata_greedy = false;      // greedy decoding for metadata fields
  std::string generator_id = "tabloid";
};

struct GenerationResult {
  LabeledArticle article;
  std::vector<int> body_ids;  // generated body token ids (verbatim, no end token)
  std::vector<std::string> warnings;
};

/// The three-step workflow: (a) generate the body from the provided
/// metadata, (b) generate missing metadata fields conditioned on
/// everything generated so far, (c) optionally regenerate a provided
/// headline conditioned on all other fields. Provided fields are
/// preserved verbatim. At least one metadata field must be provided.
template <class T>
GenerationResult generate_article(const TransformerLM<T>& model, const Vocab& vocab,
                                  const ArticleRecord& provided, FieldSet provided_fields,
                                  const SamplerConfig& cfg, const GenerateOptions& opts,
                                  Rng& rng);

}  // namespace tabloid
