// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "tabloid/corpus.hpp"

namespace tabloid {

/// Knobs for the synthetic news micro-language. The generated corpus is a
/// templated language with learnable metadata->body correlations: every
/// domain has its own marker lexicon and a peaked topic prior, headline
/// content words are echoed inside the body, and the dateline sentence
/// spells out the publication month and weekday.
struct SynthConfig {
  int n_articles = 1000;
  uint64_t seed = 0;
  // Inclusive publication-date range.
  Date first_date{2019, 1, 1};
  Date last_date{2019, 4, 30};
  // Topic sentences per body, uniform in [min,max]; the dateline and the
  // headline-echo sentence are always added on top.
  int min_topic_sentences = 4;
  int max_topic_sentences = 8;
};

std::vector<ArticleRecord> synth_corpus(const SynthConfig& cfg);

/// Vocabulary introspection used by tests and corpus stats.
int synth_num_domains();
int synth_num_topics();
const char* synth_domain(int i);
/// The marker words exclusive to domain i (size synth_markers_per_domain()).
int synth_markers_per_domain();
const char* synth_marker(int domain, int j);

}  // namespace tabloid
