// SPDX-License-Identifier: Apache-2.0
#include "tabloid/synth.hpp"

#include <array>
#include <stdexcept>

namespace tabloid {

namespace {

constexpr int kNumDomains = 8;
constexpr int kNumTopics = 12;
constexpr int kMarkersPerDomain = 4;

const char* kDomains[kNumDomains] = {
    "globe-ledger.com",   "daily-signal.net",  "metro-courier.org", "coastal-times.com",
    "union-herald.net",   "civic-observer.org", "frontier-post.com", "harbor-gazette.net",
};

// Desk word printed in the dateline; one per domain.
const char* kDesks[kNumDomains] = {
    "ledger", "signal", "courier", "tides", "union", "civic", "frontier", "harbor",
};

// Marker adverbs exclusive to each domain's house style.
const char* kMarkers[kNumDomains][kMarkersPerDomain] = {
    {"notably", "assuredly", "broadly", "squarely"},
    {"evidently", "keenly", "starkly", "briskly"},
    {"plainly", "firmly", "widely", "swiftly"},
    {"openly", "calmly", "sharply", "warmly"},
    {"duly", "gravely", "tightly", "soundly"},
    {"frankly", "neatly", "loudly", "coolly"},
    {"roughly", "promptly", "flatly", "vividly"},
    {"surely", "gently", "oddly", "freshly"},
};

struct TopicWords {
  const char* name;
  std::array<const char*, 6> nouns;
  std::array<const char*, 5> verbs;
  std::array<const char*, 5> adjs;
  std::array<const char*, 4> entities;
};

const TopicWords kTopics[kNumTopics] = {
    {"markets",
     {"shares", "bonds", "index", "traders", "futures", "earnings"},
     {"rallied", "slipped", "climbed", "steadied", "wavered"},
     {"volatile", "bullish", "sluggish", "record", "cautious"},
     {"exchange", "brokerage", "regulator", "fund"}},
    {"elections",
     {"ballot", "turnout", "campaign", "runoff", "precinct", "margin"},
     {"narrowed", "widened", "surged", "stalled", "shifted"},
     {"contested", "decisive", "narrow", "late", "heated"},
     {"council", "commission", "party", "registrar"}},
    {"storms",
     {"rainfall", "winds", "flooding", "forecast", "surge", "hail"},
     {"battered", "eased", "intensified", "drenched", "lingered"},
     {"severe", "coastal", "sudden", "heavy", "gusty"},
     {"levee", "grid", "shelter", "basin"}},
    {"football",
     {"squad", "striker", "defense", "fixture", "keeper", "midfield"},
     {"equalized", "pressed", "conceded", "clinched", "rotated"},
     {"scrappy", "clinical", "ragged", "spirited", "wasteful"},
     {"stadium", "academy", "league", "derby"}},
    {"cinema",
     {"premiere", "script", "director", "sequel", "audience", "score"},
     {"screened", "wrapped", "charmed", "divided", "trailed"},
     {"somber", "lavish", "quiet", "crowded", "uneven"},
     {"festival", "studio", "critics", "boxoffice"}},
    {"vaccines",
     {"trial", "dosage", "cohort", "antibody", "booster", "uptake"},
     {"enrolled", "cleared", "lagged", "expanded", "paused"},
     {"interim", "robust", "mixed", "early", "sparse"},
     {"clinic", "panel", "registry", "laboratory"}},
    {"satellites",
     {"orbit", "payload", "antenna", "telemetry", "launch", "thruster"},
     {"deployed", "drifted", "relayed", "circled", "docked"},
     {"polar", "idle", "nominal", "faint", "stable"},
     {"launchpad", "groundstation", "constellation", "observatory"}},
    {"wildfires",
     {"blaze", "acreage", "embers", "crews", "smoke", "containment"},
     {"spread", "smoldered", "flared", "retreated", "jumped"},
     {"dry", "windblown", "stubborn", "distant", "charred"},
     {"ridge", "canyon", "airtanker", "firebreak"}},
    {"museums",
     {"exhibit", "archive", "curator", "loan", "gallery", "patrons"},
     {"opened", "restored", "acquired", "toured", "cataloged"},
     {"borrowed", "rare", "faded", "restored", "touring"},
     {"atrium", "foundation", "estate", "wing"}},
    {"startups",
     {"funding", "payroll", "pitch", "valuation", "prototype", "churn"},
     {"raised", "pivoted", "hired", "shipped", "folded"},
     {"lean", "crowded", "stealth", "profitable", "fragile"},
     {"incubator", "boardroom", "backer", "cohort"}},
    {"railways",
     {"timetable", "signal", "carriages", "freight", "platform", "track"},
     {"resumed", "derailed", "slowed", "electrified", "idled"},
     {"delayed", "rural", "overnight", "crowded", "aging"},
     {"depot", "junction", "operator", "terminus"}},
    {"harvests",
     {"yield", "acreage", "grain", "orchard", "silo", "pricing"},
     {"ripened", "shrank", "rebounded", "spoiled", "doubled"},
     {"bumper", "late", "parched", "export", "modest"},
     {"cooperative", "mill", "auction", "county"}},
};

// Zipf-weighted filler adverbials; the rare tail is what keeps human text
// off the model's nucleus at p < 1.
const char* kFillers[] = {
    "overnight",  "meanwhile",   "regardless", "reportedly", "in turn",    "for now",
    "at length",  "by morning",  "in earnest", "at last",    "off record", "between rounds",
    "under seal", "against odds", "on balance", "past midnight", "amid doubts", "sight unseen",
    "by degrees", "under protest", "on cue",    "at the wire", "in kind",    "against form",
};
constexpr int kNumFillers = sizeof(kFillers) / sizeof(kFillers[0]);

const char* kMonths[12] = {"january", "february", "march",     "april",   "may",      "june",
                           "july",    "august",   "september", "october", "november", "december"};
const char* kWeekdays[7] = {"monday", "tuesday", "wednesday", "thursday",
                            "friday", "saturday", "sunday"};

const char* kFirstNames[16] = {"ada",  "bram", "cleo", "dov",  "enid", "filip", "greta", "hugh",
                               "iris", "jonas", "kira", "lev",  "mara", "nils",  "odile", "pavel"};
const char* kLastNames[16] = {"arbor",  "bellis", "calder", "droste", "ellery", "fenwick",
                              "garrow", "halden", "ibsen",  "jarvis", "keating", "lindqvist",
                              "marsh",  "norlund", "ostrow", "pryce"};

int days_in_month(int year, int month) {
  static const int mdays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  bool leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
  return month == 2 && leap ? 29 : mdays[month - 1];
}

std::string format_date(const Date& d) {
  char buf[11];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", d.year, d.month, d.day);
  return buf;
}

Date random_date(Rng& rng, const Date& lo, const Date& hi) {
  // Enumerate candidate days once per call; ranges here are a few months.
  std::vector<Date> days;
  Date d = lo;
  while (d <= hi) {
    days.push_back(d);
    if (++d.day > days_in_month(d.year, d.month)) {
      d.day = 1;
      if (++d.month > 12) {
        d.month = 1;
        ++d.year;
      }
    }
  }
  return days[rng.uniform_int(days.size())];
}

std::string filler(Rng& rng) {
  // weight 1/(rank+1)
  static const std::vector<double> w = [] {
    std::vector<double> v(kNumFillers);
    for (int i = 0; i < kNumFillers; ++i) v[i] = 1.0 / (i + 1);
    return v;
  }();
  return kFillers[rng.weighted(w)];
}

int domain_topic(Rng& rng, int domain) {
  std::vector<double> w(kNumTopics, 0.25);
  w[domain % kNumTopics] = 6.0;
  w[(domain + 3) % kNumTopics] = 3.0;
  w[(domain + 7) % kNumTopics] = 2.0;
  return static_cast<int>(rng.weighted(w));
}

struct SentenceCtx {
  int domain;
  const TopicWords* topic;
  std::string month, wday;
};

template <class... Parts>
std::string join(const Parts&... parts) {
  std::string s;
  auto add = [&s](const auto& p) {
    if (!s.empty()) s += ' ';
    s += p;
  };
  (add(parts), ...);
  return s;
}

std::string pick(Rng& rng, const auto& arr) { return arr[rng.uniform_int(arr.size())]; }

std::string marker(Rng& rng, int domain) {
  return kMarkers[domain][rng.uniform_int(kMarkersPerDomain)];
}

std::string number(Rng& rng) { return std::to_string(2 + rng.uniform_int(96)); }

std::string topic_sentence(Rng& rng, const SentenceCtx& c) {
  const TopicWords& t = *c.topic;
  std::string lead = rng.bernoulli(0.3) ? marker(rng, c.domain) + " " : "";
  switch (rng.uniform_int(5)) {
    case 0:
      return lead + join("officials", filler(rng), "confirmed the", pick(rng, t.adjs),
                         pick(rng, t.nouns), pick(rng, t.verbs), "while the", pick(rng, t.entities),
                         "watched");
    case 1:
      return lead + join("the", pick(rng, t.nouns), pick(rng, t.verbs), "again as the",
                         pick(rng, t.entities), "cited", number(rng), "percent",
                         pick(rng, t.nouns));
    case 2:
      return lead + join("staff at the", kDesks[c.domain], "desk", filler(rng), "described a",
                         pick(rng, t.adjs), pick(rng, t.nouns), "beside the",
                         pick(rng, t.entities));
    case 3:
      return lead + join("a", pick(rng, t.adjs), pick(rng, t.nouns), "left the",
                         pick(rng, t.entities), pick(rng, t.adjs), "by", c.wday, "evening");
    default:
      return lead + join("readers asked whether the", pick(rng, t.nouns), "had", "truly",
                         pick(rng, t.verbs), "despite the", pick(rng, t.adjs),
                         pick(rng, t.nouns));
  }
}

}  // namespace

int synth_num_domains() { return kNumDomains; }
int synth_num_topics() { return kNumTopics; }
const char* synth_domain(int i) { return kDomains[i]; }
int synth_markers_per_domain() { return kMarkersPerDomain; }
const char* synth_marker(int domain, int j) { return kMarkers[domain][j]; }

std::vector<ArticleRecord> synth_corpus(const SynthConfig& cfg) {
  if (cfg.n_articles < 0) throw std::invalid_argument("n_articles must be >= 0");
  Rng root(cfg.seed);
  std::vector<ArticleRecord> out;
  out.reserve(cfg.n_articles);
  for (int i = 0; i < cfg.n_articles; ++i) {
    Rng rng = root.fork("article-" + std::to_string(i));
    ArticleRecord a;

    int domain = static_cast<int>(rng.uniform_int(kNumDomains));
    int topic_id = domain_topic(rng, domain);
    const TopicWords& t = kTopics[topic_id];
    a.domain = kDomains[domain];

    Date date = random_date(rng, cfg.first_date, cfg.last_date);
    a.date = format_date(date);

    // 1 author 80%, 2 authors 13%, none 7%; names drawn from a slice of the
    // shared pools so bylines correlate with the domain.
    double au = rng.uniform01();
    int n_authors = au < 0.07 ? 0 : au < 0.87 ? 1 : 2;
    for (int k = 0; k < n_authors; ++k) {
      int pick_ix = static_cast<int>((domain * 5 + rng.uniform_int(6)) % 16);
      a.authors.push_back(join(kFirstNames[pick_ix], kLastNames[(pick_ix + domain) % 16]));
    }

    // Headline: topic content words, echoed verbatim in the body below.
    std::string h_adj = pick(rng, t.adjs), h_noun = pick(rng, t.nouns);
    std::string h_verb = pick(rng, t.verbs), h_entity = pick(rng, t.entities);
    switch (rng.uniform_int(3)) {
      case 0: a.headline = join(h_adj, h_noun, h_verb, "near the", h_entity); break;
      case 1: a.headline = join(t.name, "watch:", h_adj, h_noun, h_verb); break;
      default: a.headline = join(h_noun, h_verb, "as", h_entity, "stays", h_adj); break;
    }

    SentenceCtx ctx{domain, &t, kMonths[date.month - 1], kWeekdays[weekday(date)]};

    std::vector<std::string> sentences;
    sentences.push_back(join(marker(rng, domain), "report from the", kDesks[domain],
                             "desk filed on", ctx.wday, "in", ctx.month));
    int n_topic = cfg.min_topic_sentences +
                  static_cast<int>(rng.uniform_int(
                      static_cast<uint64_t>(cfg.max_topic_sentences - cfg.min_topic_sentences + 1)));
    for (int s = 0; s < n_topic; ++s) sentences.push_back(topic_sentence(rng, ctx));
    // Headline echo.
    size_t echo_at = 1 + rng.uniform_int(sentences.size());
    sentences.insert(sentences.begin() + echo_at,
                     join("witnesses said the", h_adj, h_noun, h_verb, "near the", h_entity,
                          filler(rng)));
    if (!a.authors.empty() && rng.bernoulli(0.5)) {
      sentences.push_back(join("correspondent", a.authors[0], "noted the", pick(rng, t.nouns),
                               "had", pick(rng, t.verbs)));
    }

    for (const auto& s : sentences) {
      a.body += s;
      a.body += ". ";
    }
    if (!a.body.empty()) a.body.pop_back();  // trailing space

    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace tabloid
