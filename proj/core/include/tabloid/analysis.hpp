// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "tabloid/detect.hpp"
#include "tabloid/fields.hpp"
#include "tabloid/model.hpp"

namespace tabloid {

struct PerplexityReport {
  double perplexity = 0;  // exp(total_nll / n_tokens)
  std::string mode;       // "conditional" or "unconditional"
  int n_articles = 0;
  long n_tokens = 0;
  double total_nll = 0;
  // per-article macro average, offered alongside the corpus-level number
  double macro_perplexity = 0;
};

/// Body negative log-likelihood: scores predictions of every token after
/// <|start-body|> through <|end-body|> inclusive. Conditional mode
/// prefixes the article's full metadata blocks; unconditional provides no
/// context. Sequences are clipped to the model's max context.
template <class T>
PerplexityReport body_perplexity(const TransformerLM<T>& model, const Vocab& vocab,
                                 std::span<const ArticleRecord> articles, bool conditional,
                                 int threads = 1);

/// As above with an explicit context field set (used by tests for the
/// degenerate empty-context case).
template <class T>
PerplexityReport body_perplexity_ctx(const TransformerLM<T>& model, const Vocab& vocab,
                                     std::span<const ArticleRecord> articles, FieldSet context,
                                     int threads = 1);

struct PositionCurve {
  std::string source;             // e.g. "human" or "generated@p=0.96"
  std::vector<double> mean_nll;   // indexed by body position
  std::vector<long> count;        // articles covering each position
  double total_nll = 0;           // token-weighted sum over all positions
  long total_tokens = 0;

  /// First index where coverage drops below the fraction of articles
  /// (curves are emitted up to this point to avoid noisy tails).
  size_t coverage_cutoff(double min_fraction = 0.25) const;
};

/// Texts to score: the article supplies the metadata context, body_ids the
/// (tokenized) body to evaluate. For human text body_ids = encode(body);
/// for machine text pass the generation's verbatim token ids.
struct ScoredText {
  const ArticleRecord* article;
  std::vector<int> body_ids;
};

std::vector<ScoredText> scored_texts_from_articles(const Vocab& vocab,
                                                   std::span<const ArticleRecord> articles);

/// Mean NLL per body position (0 = first body token; the end-of-body
/// token, when present, sits at position len(body)). Metadata is always
/// provided as context.
template <class T>
PositionCurve perplexity_by_position(const TransformerLM<T>& model, const Vocab& vocab,
                                     std::span<const ScoredText> texts, const std::string& source,
                                     int threads = 1);

/// Least-squares slope of (generated - human) mean NLL against position,
/// over the positions both curves cover before their coverage cutoffs.
double gap_slope(const PositionCurve& human, const PositionCurve& generated);

/// Fraction of body tokens falling outside the model's top-p nucleus at
/// their step, replayed through the same incremental decoder used for
/// generation (so a text generated at threshold p scores exactly 0).
template <class T>
double tail_occupancy(const TransformerLM<T>& model, const Vocab& vocab,
                      std::span<const ScoredText> texts, double p, double temperature = 1.0,
                      int threads = 1);

/// CSV rows "p,unpaired_acc,paired_acc" ascending in p plus a trailing
/// argmin row.
std::string sweep_report(const std::map<double, DetectionReport>& by_p);

std::string ppl_csv(std::span<const PerplexityReport> reports);
std::string ppl_by_pos_csv(std::span<const PositionCurve> curves, double min_coverage = 0.25);

}  // namespace tabloid
