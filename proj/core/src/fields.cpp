// SPDX-License-Identifier: Apache-2.0
#include "tabloid/fields.hpp"

#include <algorithm>
#include <stdexcept>

namespace tabloid {

const char* field_name(Field f) {
  static const char* names[kNumFields] = {"domain", "date", "authors", "headline", "body"};
  return names[static_cast<int>(f)];
}

int field_start_id(Field f) { return 2 * static_cast<int>(f); }
int field_end_id(Field f) { return 2 * static_cast<int>(f) + 1; }

std::vector<Field> canonical_sort(FieldSet fields) {
  std::vector<Field> out;
  for (int i = 0; i < kNumFields; ++i) {
    Field f = static_cast<Field>(i);
    if (fields.contains(f)) out.push_back(f);
  }
  return out;
}

std::string field_text(const ArticleRecord& a, Field f) {
  switch (f) {
    case Field::Domain: return a.domain;
    case Field::Date: return a.date;
    case Field::Headline: return a.headline;
    case Field::Body: return a.body;
    case Field::Authors: {
      std::string s;
      for (size_t i = 0; i < a.authors.size(); ++i) {
        if (i) s += kAuthorSep;
        s += a.authors[i];
      }
      return s;
    }
  }
  throw std::logic_error("unreachable");
}

void set_field_text(ArticleRecord& a, Field f, const std::string& text) {
  switch (f) {
    case Field::Domain: a.domain = text; return;
    case Field::Date: a.date = text; return;
    case Field::Headline: a.headline = text; return;
    case Field::Body: a.body = text; return;
    case Field::Authors: {
      a.authors.clear();
      if (text.empty()) return;
      size_t pos = 0;
      const std::string sep = kAuthorSep;
      while (true) {
        size_t next = text.find(sep, pos);
        if (next == std::string::npos) {
          a.authors.push_back(text.substr(pos));
          return;
        }
        a.authors.push_back(text.substr(pos, next - pos));
        pos = next + sep.size();
      }
    }
  }
}

ArticleTokens tokenize_fields(const Vocab& vocab, const ArticleRecord& a) {
  ArticleTokens t;
  for (int i = 0; i < kNumFields; ++i)
    t.content[i] = vocab.encode(field_text(a, static_cast<Field>(i)));
  return t;
}

std::vector<int> encode_context(const ArticleTokens& toks, FieldSet context) {
  std::vector<int> out;
  for (Field f : canonical_sort(context)) {
    const auto& content = toks.content[static_cast<int>(f)];
    out.push_back(field_start_id(f));
    out.insert(out.end(), content.begin(), content.end());
    out.push_back(field_end_id(f));
  }
  return out;
}

std::vector<int> encode_context(const Vocab& vocab, const ArticleRecord& a, FieldSet context) {
  std::vector<int> out;
  for (Field f : canonical_sort(context)) {
    out.push_back(field_start_id(f));
    auto content = vocab.encode(field_text(a, f));
    out.insert(out.end(), content.begin(), content.end());
    out.push_back(field_end_id(f));
  }
  return out;
}

ExamplePlan plan_training_example(FieldSet present, Rng& rng, const DropoutConfig& dropout) {
  ExamplePlan plan;
  if (rng.bernoulli(dropout.body_only_prob)) {
    plan.survivors = present & FieldSet{Field::Body};
  } else {
    for (Field f : canonical_sort(present)) {
      if (f != Field::Body && rng.bernoulli(dropout.per_field_drop)) continue;
      plan.survivors.insert(f);
    }
  }
  for (Field f : canonical_sort(plan.survivors)) {
    (rng.bernoulli(0.5) ? plan.first_half : plan.second_half).insert(f);
  }
  return plan;
}

EncodedExample build_training_example(const ArticleTokens& toks, const ExamplePlan& plan,
                                      int max_len) {
  EncodedExample ex;
  ex.first_half = plan.first_half;
  ex.second_half = plan.second_half;
  auto emit_half = [&](FieldSet half) {
    for (Field f : canonical_sort(half)) {
      if (static_cast<int>(ex.input_ids.size()) >= max_len) return;
      int block_start = static_cast<int>(ex.input_ids.size());
      const auto& content = toks.content[static_cast<int>(f)];
      ex.input_ids.push_back(field_start_id(f));
      for (int id : content) {
        if (static_cast<int>(ex.input_ids.size()) >= max_len) break;
        ex.input_ids.push_back(id);
      }
      if (static_cast<int>(ex.input_ids.size()) < max_len)
        ex.input_ids.push_back(field_end_id(f));
      ex.boundaries[f] = {block_start, static_cast<int>(ex.input_ids.size())};
    }
  };
  emit_half(plan.first_half);
  emit_half(plan.second_half);
  if (static_cast<int>(ex.input_ids.size()) > max_len) ex.input_ids.resize(max_len);
  ex.loss_mask.assign(ex.input_ids.size(), 1);
  return ex;
}

EncodedExample make_training_example(const Vocab& vocab, const ArticleRecord& a, Rng& rng,
                                     const DropoutConfig& dropout, int max_len) {
  FieldSet present = FieldSet::all();
  ArticleTokens toks = tokenize_fields(vocab, a);
  constexpr int kMaxResamples = 16;
  for (int attempt = 0; attempt < kMaxResamples; ++attempt) {
    ExamplePlan plan = plan_training_example(present, rng, dropout);
    int content_tokens = 0;
    for (Field f : canonical_sort(plan.survivors))
      content_tokens += static_cast<int>(toks.content[static_cast<int>(f)].size());
    if (content_tokens == 0) continue;
    return build_training_example(toks, plan, max_len);
  }
  throw std::runtime_error("could not draw a non-empty training example (all fields empty)");
}

std::vector<int> inference_prompt(const Vocab& vocab, const ArticleRecord& context_article,
                                  FieldSet context, Field target) {
  if (context.contains(target))
    throw std::invalid_argument(std::string("target field '") + field_name(target) +
                                "' is already part of the context");
  std::vector<int> ids = encode_context(vocab, context_article, context);
  ids.push_back(field_start_id(target));
  return ids;
}

std::string extract_field(const Vocab& vocab, const std::vector<int>& ids, Field target) {
  int start = field_start_id(target), end = field_end_id(target);
  auto it = std::find(ids.begin(), ids.end(), start);
  if (it == ids.end())
    throw std::invalid_argument(std::string("start token for '") + field_name(target) +
                                "' not found");
  std::vector<int> content;
  for (++it; it != ids.end() && *it != end; ++it) content.push_back(*it);
  return vocab.decode(content);
}

}  // namespace tabloid
