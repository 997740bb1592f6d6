// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tabloid/rng.hpp"

namespace tabloid {

/// One news document. `date` is an ISO-8601 calendar date (YYYY-MM-DD),
/// `domain` a lowercase web domain. Human records must have a nonempty body.
struct ArticleRecord {
  std::string domain;
  std::string date;
  std::vector<std::string> authors;
  std::string headline;
  std::string body;

  bool operator==(const ArticleRecord&) const = default;
};

enum class Label { Human, Machine };

struct LabeledArticle {
  ArticleRecord article;
  Label label = Label::Human;
  std::string generator_id;       // nonempty only for Machine records
  std::optional<double> top_p;    // present iff label == Machine

  bool operator==(const LabeledArticle&) const = default;
};

struct CorpusSplit {
  std::vector<LabeledArticle> train, val, test;
};

struct Date {
  int year = 0, month = 0, day = 0;
  auto operator<=>(const Date&) const = default;
};

/// Parses and validates a YYYY-MM-DD calendar date (leap years included).
/// Throws std::invalid_argument on malformed or impossible dates.
Date parse_date(const std::string& s);

/// Day of week, 0 = Monday .. 6 = Sunday.
int weekday(const Date& d);

/// Validates the ArticleRecord invariants: valid date, nonempty domain,
/// and no reserved control characters (bytes 0x00-0x08, 0x0B-0x0C,
/// 0x0E-0x1F, which the tokenizer reserves for special-token rendering)
/// in any field. Throws std::invalid_argument naming the offending field.
void validate(const ArticleRecord& a, bool require_body = false);
void validate(const LabeledArticle& a);

/// Reads a JSONL corpus. Each line is one object with keys exactly
/// {domain, date, authors, headline, body} plus optional
/// {label, generator_id, top_p}; unknown keys are rejected. Records
/// without a label key load as Human. Errors carry the 1-based line number.
std::vector<LabeledArticle> load_jsonl(const std::string& path);

/// Plain-article convenience wrapper around load_jsonl.
std::vector<ArticleRecord> load_articles(const std::string& path);

/// Writes records as UTF-8, LF-terminated JSONL with a fixed key order.
/// Label keys are emitted only when they carry information, so
/// load_jsonl(write_jsonl(r)) == r field-for-field.
void write_jsonl(const std::vector<LabeledArticle>& records, const std::string& path);
void write_jsonl(const std::vector<ArticleRecord>& records, const std::string& path);

enum class DedupKey { Body, DomainHeadline };

/// Keeps the first occurrence per key (default: exact body string);
/// otherwise preserves input order.
std::vector<LabeledArticle> dedup(const std::vector<LabeledArticle>& records,
                                  DedupKey key = DedupKey::Body);
std::vector<ArticleRecord> dedup(const std::vector<ArticleRecord>& records,
                                 DedupKey key = DedupKey::Body);

/// Partitions by publication date: strictly before `cutoff` goes to the
/// train pool, on/after goes to the eval pool.
std::pair<std::vector<ArticleRecord>, std::vector<ArticleRecord>> split_by_date(
    const std::vector<ArticleRecord>& records, const Date& cutoff);

struct SplitRatio {
  int train = 10, val = 2, test = 8;
};

/// Balanced train/val/test split of a human pool and a machine pool of
/// equal size. Per-label counts are scaled from the ratio; assignment is
/// a seeded shuffle. Throws if the pools are unbalanced or too small.
CorpusSplit make_detection_split(const std::vector<LabeledArticle>& human,
                                 const std::vector<LabeledArticle>& machine,
                                 const SplitRatio& ratio, uint64_t seed);

}  // namespace tabloid
