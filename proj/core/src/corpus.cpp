// SPDX-License-Identifier: Apache-2.0
#include "tabloid/corpus.hpp"

#include <fstream>
#include <stdexcept>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace tabloid {

using json = nlohmann::ordered_json;

Date parse_date(const std::string& s) {
  auto fail = [&] { throw std::invalid_argument("invalid date: '" + s + "'"); };
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') fail();
  for (int i : {0, 1, 2, 3, 5, 6, 8, 9})
    if (s[i] < '0' || s[i] > '9') fail();
  Date d;
  d.year = std::stoi(s.substr(0, 4));
  d.month = std::stoi(s.substr(5, 2));
  d.day = std::stoi(s.substr(8, 2));
  if (d.month < 1 || d.month > 12) fail();
  static const int mdays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  int dim = mdays[d.month - 1];
  bool leap = (d.year % 4 == 0 && d.year % 100 != 0) || d.year % 400 == 0;
  if (d.month == 2 && leap) dim = 29;
  if (d.day < 1 || d.day > dim) fail();
  return d;
}

int weekday(const Date& d) {
  // Howard Hinnant's days-from-civil, anchored so 1970-01-01 is a Thursday.
  int y = d.year - (d.month <= 2);
  int era = (y >= 0 ? y : y - 399) / 400;
  unsigned yoe = static_cast<unsigned>(y - era * 400);
  unsigned doy = (153u * (d.month + (d.month > 2 ? -3 : 9)) + 2) / 5 + d.day - 1;
  unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  long days = era * 146097L + static_cast<long>(doe) - 719468L;
  return static_cast<int>(((days % 7) + 7 + 3) % 7);
}

namespace {

bool has_reserved_controls(const std::string& s) {
  for (unsigned char c : s) {
    if (c <= 0x08 || c == 0x0B || c == 0x0C || (c >= 0x0E && c <= 0x1F)) return true;
  }
  return false;
}

void check_clean(const std::string& s, const char* field) {
  if (has_reserved_controls(s))
    throw std::invalid_argument(std::string("field '") + field +
                                "' contains reserved control characters");
}

}  // namespace

void validate(const ArticleRecord& a, bool require_body) {
  if (a.domain.empty()) throw std::invalid_argument("field 'domain' is empty");
  parse_date(a.date);
  check_clean(a.domain, "domain");
  check_clean(a.headline, "headline");
  check_clean(a.body, "body");
  for (const auto& name : a.authors) check_clean(name, "authors");
  if (require_body && a.body.empty()) throw std::invalid_argument("field 'body' is empty");
}

void validate(const LabeledArticle& a) {
  validate(a.article, a.label == Label::Human);
  if ((a.label == Label::Machine) != a.top_p.has_value())
    throw std::invalid_argument("top_p must be present iff label is Machine");
  if (a.top_p && (*a.top_p <= 0.0 || *a.top_p > 1.0))
    throw std::invalid_argument("top_p must lie in (0, 1]");
}

namespace {

const char* kKnownKeys[] = {"domain", "date",  "authors",      "headline",
                            "body",   "label", "generator_id", "top_p"};

LabeledArticle parse_record(const json& j, size_t lineno) {
  auto err = [&](const std::string& what) {
    throw std::runtime_error("line " + std::to_string(lineno) + ": " + what);
  };
  if (!j.is_object()) err("record is not a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : kKnownKeys) known |= (it.key() == k);
    if (!known) err("unknown key '" + it.key() + "'");
  }
  for (const char* k : {"domain", "date", "authors", "headline", "body"})
    if (!j.contains(k)) err(std::string("missing key '") + k + "'");

  LabeledArticle r;
  try {
    r.article.domain = j.at("domain").get<std::string>();
    r.article.date = j.at("date").get<std::string>();
    r.article.authors = j.at("authors").get<std::vector<std::string>>();
    r.article.headline = j.at("headline").get<std::string>();
    r.article.body = j.at("body").get<std::string>();
    if (j.contains("label")) {
      std::string l = j.at("label").get<std::string>();
      if (l == "human") r.label = Label::Human;
      else if (l == "machine") r.label = Label::Machine;
      else err("label must be 'human' or 'machine', got '" + l + "'");
    }
    if (j.contains("generator_id")) r.generator_id = j.at("generator_id").get<std::string>();
    if (j.contains("top_p")) r.top_p = j.at("top_p").get<double>();
  } catch (const json::exception& e) {
    err(e.what());
  }
  try {
    validate(r);
  } catch (const std::invalid_argument& e) {
    err(e.what());
  }
  return r;
}

}  // namespace

std::vector<LabeledArticle> load_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::vector<LabeledArticle> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw std::runtime_error("line " + std::to_string(lineno) + ": malformed JSON");
    out.push_back(parse_record(j, lineno));
  }
  return out;
}

std::vector<ArticleRecord> load_articles(const std::string& path) {
  auto labeled = load_jsonl(path);
  std::vector<ArticleRecord> out;
  out.reserve(labeled.size());
  for (auto& r : labeled) out.push_back(std::move(r.article));
  return out;
}

namespace {

json to_json(const LabeledArticle& r) {
  json j;
  j["domain"] = r.article.domain;
  j["date"] = r.article.date;
  j["authors"] = r.article.authors;
  j["headline"] = r.article.headline;
  j["body"] = r.article.body;
  if (r.label == Label::Machine) j["label"] = "machine";
  if (!r.generator_id.empty()) j["generator_id"] = r.generator_id;
  if (r.top_p) j["top_p"] = *r.top_p;
  return j;
}

}  // namespace

void write_jsonl(const std::vector<LabeledArticle>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  for (const auto& r : records) out << to_json(r).dump() << '\n';
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

void write_jsonl(const std::vector<ArticleRecord>& records, const std::string& path) {
  std::vector<LabeledArticle> labeled(records.size());
  for (size_t i = 0; i < records.size(); ++i) labeled[i].article = records[i];
  write_jsonl(labeled, path);
}

namespace {

template <class R>
std::vector<R> dedup_impl(const std::vector<R>& records, DedupKey key) {
  std::unordered_set<std::string> seen;
  std::vector<R> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    const ArticleRecord* a;
    if constexpr (std::is_same_v<R, LabeledArticle>) a = &r.article;
    else a = &r;
    std::string k = key == DedupKey::Body ? a->body : a->domain + "\n" + a->headline;
    if (seen.insert(std::move(k)).second) out.push_back(r);
  }
  return out;
}

}  // namespace

std::vector<LabeledArticle> dedup(const std::vector<LabeledArticle>& records, DedupKey key) {
  return dedup_impl(records, key);
}
std::vector<ArticleRecord> dedup(const std::vector<ArticleRecord>& records, DedupKey key) {
  return dedup_impl(records, key);
}

std::pair<std::vector<ArticleRecord>, std::vector<ArticleRecord>> split_by_date(
    const std::vector<ArticleRecord>& records, const Date& cutoff) {
  std::pair<std::vector<ArticleRecord>, std::vector<ArticleRecord>> out;
  for (const auto& r : records) {
    (parse_date(r.date) < cutoff ? out.first : out.second).push_back(r);
  }
  return out;
}

CorpusSplit make_detection_split(const std::vector<LabeledArticle>& human,
                                 const std::vector<LabeledArticle>& machine,
                                 const SplitRatio& ratio, uint64_t seed) {
  if (human.size() != machine.size())
    throw std::invalid_argument("detection split requires equal human/machine counts, got " +
                                std::to_string(human.size()) + " vs " +
                                std::to_string(machine.size()));
  int parts = ratio.train + ratio.val + ratio.test;
  if (parts <= 0) throw std::invalid_argument("split ratio must be positive");
  size_t n = human.size();
  if (human.size() + machine.size() < static_cast<size_t>(parts))
    throw std::invalid_argument("pool too small for ratio: need at least " +
                                std::to_string(parts) + " records in total");

  size_t n_train = n * ratio.train / parts;
  size_t n_val = n * ratio.val / parts;
  size_t n_test = n - n_train - n_val;

  CorpusSplit split;
  Rng rng(seed);
  for (const auto* pool : {&human, &machine}) {
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng label_rng = rng.fork(pool == &human ? "split-human" : "split-machine");
    label_rng.shuffle(order);
    for (size_t i = 0; i < n; ++i) {
      const auto& rec = (*pool)[order[i]];
      if (i < n_train) split.train.push_back(rec);
      else if (i < n_train + n_val) split.val.push_back(rec);
      else split.test.push_back(rec);
    }
  }
  (void)n_test;
  return split;
}

}  // namespace tabloid
