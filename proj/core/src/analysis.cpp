// SPDX-License-Identifier: Apache-2.0
#include "tabloid/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "tabloid/decoder.hpp"
#include "tabloid/util.hpp"

namespace tabloid {

namespace {

struct BodyNll {
  std::vector<double> nll;  // per body position (content tokens, then end token)
  long tokens() const { return static_cast<long>(nll.size()); }
  double total() const {
    double s = 0;
    for (double x : nll) s += x;
    return s;
  }
};

/// Scores the body of one article: context blocks + <|start-body|> + body
/// ids (+ <|end-body|> when it fits). Returns per-position NLL for every
/// prediction after <|start-body|>.
template <class T>
BodyNll score_body(const TransformerLM<T>& model, const Vocab& vocab, const ArticleRecord& art,
                   FieldSet context, std::span<const int> body_ids, Acts<T>& acts) {
  std::vector<int> ids = encode_context(vocab, art, context);
  size_t body_start = ids.size();  // index of <|start-body|>
  ids.push_back(field_start_id(Field::Body));
  ids.insert(ids.end(), body_ids.begin(), body_ids.end());
  ids.push_back(field_end_id(Field::Body));
  size_t cap = static_cast<size_t>(model.config().max_seq);
  if (ids.size() > cap) ids.resize(cap);

  BodyNll out;
  if (ids.size() < body_start + 2) return out;  // nothing after <|start-body|> to score

  model.forward(ids, acts);
  std::vector<int> targets(ids.size(), 0);
  for (size_t i = 0; i + 1 < ids.size(); ++i) targets[i] = ids[i + 1];
  std::vector<double> nll = nll_per_position(acts.logits, targets);
  // predictions of tokens at absolute positions body_start+1 .. n-1
  for (size_t i = body_start; i + 1 < ids.size(); ++i) out.nll.push_back(nll[i]);
  return out;
}

}  // namespace

template <class T>
PerplexityReport body_perplexity_ctx(const TransformerLM<T>& model, const Vocab& vocab,
                                     std::span<const ArticleRecord> articles, FieldSet context,
                                     int threads) {
  if (articles.empty()) throw std::invalid_argument("body_perplexity: no articles");
  std::vector<BodyNll> per(articles.size());
  parallel_for(articles.size(), threads, [&](size_t i) {
    Acts<T> acts;
    per[i] = score_body(model, vocab, articles[i], context, vocab.encode(articles[i].body), acts);
  });
  PerplexityReport rep;
  rep.mode = context.empty() ? "unconditional" : "conditional";
  rep.n_articles = static_cast<int>(articles.size());
  double macro = 0;
  int macro_n = 0;
  for (auto& b : per) {
    rep.total_nll += b.total();
    rep.n_tokens += b.tokens();
    if (b.tokens() > 0) {
      macro += std::exp(b.total() / b.tokens());
      ++macro_n;
    }
  }
  if (rep.n_tokens == 0) throw std::runtime_error("body_perplexity: no scoreable body tokens");
  rep.perplexity = std::exp(rep.total_nll / rep.n_tokens);
  rep.macro_perplexity = macro_n ? macro / macro_n : 0;
  return rep;
}

template <class T>
PerplexityReport body_perplexity(const TransformerLM<T>& model, const Vocab& vocab,
                                 std::span<const ArticleRecord> articles, bool conditional,
                                 int threads) {
  return body_perplexity_ctx(model, vocab, articles,
                             conditional ? FieldSet::metadata() : FieldSet{}, threads);
}

size_t PositionCurve::coverage_cutoff(double min_fraction) const {
  if (count.empty()) return 0;
  long max_count = *std::max_element(count.begin(), count.end());
  long threshold = static_cast<long>(std::ceil(min_fraction * max_count));
  for (size_t i = 0; i < count.size(); ++i)
    if (count[i] < threshold) return i;
  return count.size();
}

std::vector<ScoredText> scored_texts_from_articles(const Vocab& vocab,
                                                   std::span<const ArticleRecord> articles) {
  std::vector<ScoredText> out(articles.size());
  for (size_t i = 0; i < articles.size(); ++i) {
    out[i].article = &articles[i];
    out[i].body_ids = vocab.encode(articles[i].body);
  }
  return out;
}

template <class T>
PositionCurve perplexity_by_position(const TransformerLM<T>& model, const Vocab& vocab,
                                     std::span<const ScoredText> texts, const std::string& source,
                                     int threads) {
  if (texts.empty()) throw std::invalid_argument("perplexity_by_position: no texts");
  std::vector<BodyNll> per(texts.size());
  parallel_for(texts.size(), threads, [&](size_t i) {
    Acts<T> acts;
    per[i] = score_body(model, vocab, *texts[i].article, FieldSet::metadata(), texts[i].body_ids,
                        acts);
  });
  PositionCurve curve;
  curve.source = source;
  std::vector<double> sums;
  for (auto& b : per) {
    if (b.nll.size() > sums.size()) {
      sums.resize(b.nll.size(), 0.0);
      curve.count.resize(b.nll.size(), 0);
    }
    for (size_t pos = 0; pos < b.nll.size(); ++pos) {
      sums[pos] += b.nll[pos];
      curve.count[pos] += 1;
    }
    curve.total_nll += b.total();
    curve.total_tokens += b.tokens();
  }
  curve.mean_nll.resize(sums.size());
  for (size_t i = 0; i < sums.size(); ++i) curve.mean_nll[i] = sums[i] / curve.count[i];
  return curve;
}

double gap_slope(const PositionCurve& human, const PositionCurve& generated) {
  size_t n = std::min({human.mean_nll.size(), generated.mean_nll.size(),
                       human.coverage_cutoff(), generated.coverage_cutoff()});
  if (n < 2) throw std::invalid_argument("gap_slope: curves share fewer than 2 positions");
  // least squares of gap against position
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < n; ++i) {
    double x = static_cast<double>(i);
    double y = generated.mean_nll[i] - human.mean_nll[i];
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  double denom = n * sxx - sx * sx;
  return (n * sxy - sx * sy) / denom;
}

template <class T>
double tail_occupancy(const TransformerLM<T>& model, const Vocab& vocab,
                      std::span<const ScoredText> texts, double p, double temperature,
                      int threads) {
  if (texts.empty()) throw std::invalid_argument("tail_occupancy: no texts");
  std::vector<long> outside(texts.size(), 0), counted(texts.size(), 0);
  parallel_for(texts.size(), threads, [&](size_t i) {
    const ScoredText& item = texts[i];
    std::vector<int> prompt = encode_context(vocab, *item.article, FieldSet::metadata());
    prompt.push_back(field_start_id(Field::Body));
    Decoder<T> dec(model);
    if (static_cast<int>(prompt.size()) > dec.capacity()) return;
    const std::vector<T>* logits = &dec.feed(prompt);
    for (int tok : item.body_ids) {
      std::vector<double> probs =
          softmax_logits(std::span<const T>(logits->data(), logits->size()), temperature);
      FilteredDist kept = nucleus_filter(probs, p);
      counted[i] += 1;
      if (!kept.contains(tok)) outside[i] += 1;
      if (dec.pos() >= dec.capacity()) break;
      logits = &dec.step(tok);
    }
  });
  long total_outside = 0, total = 0;
  for (size_t i = 0; i < texts.size(); ++i) {
    total_outside += outside[i];
    total += counted[i];
  }
  if (total == 0) throw std::runtime_error("tail_occupancy: no scoreable tokens");
  return static_cast<double>(total_outside) / static_cast<double>(total);
}

std::string sweep_report(const std::map<double, DetectionReport>& by_p) {
  if (by_p.size() < 2) throw std::invalid_argument("sweep_report: need at least 2 grid points");
  std::string csv = "p,unpaired_acc,paired_acc\n";
  double argmin_p = by_p.begin()->first;
  double best = by_p.begin()->second.unpaired_accuracy;
  char line[128];
  for (const auto& [p, rep] : by_p) {
    std::snprintf(line, sizeof(line), "%.2f,%.6f,%.6f\n", p, rep.unpaired_accuracy,
                  rep.paired_accuracy);
    csv += line;
    if (rep.unpaired_accuracy < best) {
      best = rep.unpaired_accuracy;
      argmin_p = p;
    }
  }
  std::snprintf(line, sizeof(line), "argmin,%.2f,%.6f\n", argmin_p, best);
  csv += line;
  return csv;
}

std::string ppl_csv(std::span<const PerplexityReport> reports) {
  std::string csv = "mode,ppl,n_tokens\n";
  char line[128];
  for (const auto& r : reports) {
    std::snprintf(line, sizeof(line), "%s,%.6f,%ld\n", r.mode.c_str(), r.perplexity, r.n_tokens);
    csv += line;
  }
  return csv;
}

std::string ppl_by_pos_csv(std::span<const PositionCurve> curves, double min_coverage) {
  std::string csv = "source,position,mean_nll,count\n";
  char line[160];
  for (const auto& c : curves) {
    size_t cut = c.coverage_cutoff(min_coverage);
    for (size_t i = 0; i < cut; ++i) {
      std::snprintf(line, sizeof(line), "%s,%zu,%.6f,%ld\n", c.source.c_str(), i, c.mean_nll[i],
                    c.count[i]);
      csv += line;
    }
  }
  return csv;
}

// explicit instantiations
template PerplexityReport body_perplexity<float>(const TransformerLM<float>&, const Vocab&,
                                                 std::span<const ArticleRecord>, bool, int);
template PerplexityReport body_perplexity<double>(const TransformerLM<double>&, const Vocab&,
                                                  std::span<const ArticleRecord>, bool, int);
template PerplexityReport body_perplexity_ctx<float>(const TransformerLM<float>&, const Vocab&,
                                                     std::span<const ArticleRecord>, FieldSet,
                                                     int);
template PerplexityReport body_perplexity_ctx<double>(const TransformerLM<double>&, const Vocab&,
                                                      std::span<const ArticleRecord>, FieldSet,
                                                      int);
template PositionCurve perplexity_by_position<float>(const TransformerLM<float>&, const Vocab&,
                                                     std::span<const ScoredText>,
                                                     const std::string&, int);
template PositionCurve perplexity_by_position<double>(const TransformerLM<double>&, const Vocab&,
                                                      std::span<const ScoredText>,
                                                      const std::string&, int);
template double tail_occupancy<float>(const TransformerLM<float>&, const Vocab&,
                                      std::span<const ScoredText>, double, double, int);
template double tail_occupancy<double>(const TransformerLM<double>&, const Vocab&,
                                       std::span<const ScoredText>, double, double, int);

}  // namespace tabloid
