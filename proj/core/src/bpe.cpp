// SPDX-License-Identifier: Apache-2.0
#include "tabloid/bpe.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include <nlohmann/json.hpp>

namespace tabloid {

const char* special_name(int id) {
  static const char* names[kNumSpecials] = {
      "<|start-domain|>",   "<|end-domain|>",   "<|start-date|>", "<|end-date|>",
      "<|start-authors|>",  "<|end-authors|>",  "<|start-headline|>",
      "<|end-headline|>",   "<|start-body|>",   "<|end-body|>",   "<|cls|>",
      "<|pad|>",
  };
  if (id < 0 || id >= kNumSpecials) throw std::out_of_range("not a special id");
  return names[id];
}

Vocab::Vocab() { rebuild_tables(); }

Vocab Vocab::from_merges(const std::vector<std::pair<int, int>>& merges) {
  Vocab v;
  v.merges_ = merges;
  v.rebuild_tables();
  return v;
}

void Vocab::rebuild_tables() {
  strings_.clear();
  strings_.reserve(256 + merges_.size());
  for (int b = 0; b < 256; ++b) strings_.push_back(std::string(1, static_cast<char>(b)));
  for (size_t r = 0; r < merges_.size(); ++r) {
    auto [a, b] = merges_[r];
    int lo = kFirstByteId, hi = kFirstByteId + static_cast<int>(256 + r);
    if (a < lo || a >= hi || b < lo || b >= hi)
      throw std::invalid_argument("merge rule references an invalid token id");
    strings_.push_back(strings_[a - kFirstByteId] + strings_[b - kFirstByteId]);
  }
}

const std::string& Vocab::token_string(int id) const {
  if (id < kFirstByteId || id >= size())
    throw std::out_of_range("token id " + std::to_string(id) + " has no byte string");
  return strings_[id - kFirstByteId];
}

std::vector<int> Vocab::encode(std::string_view text) const {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(kFirstByteId + c);
  // One left-to-right pass per merge, in rank order. Applying rank r can
  // never create an occurrence of a pair with rank <= r (its product id is
  // larger than any id those rules mention), so this equals the
  // lowest-rank-first fixpoint.
  for (size_t r = 0; r < merges_.size() && ids.size() >= 2; ++r) {
    auto [a, b] = merges_[r];
    int merged = kFirstMergeId + static_cast<int>(r);
    size_t w = 0, i = 0;
    for (; i < ids.size();) {
      if (i + 1 < ids.size() && ids[i] == a && ids[i + 1] == b) {
        ids[w++] = merged;
        i += 2;
      } else {
        ids[w++] = ids[i++];
      }
    }
    ids.resize(w);
  }
  return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= size())
      throw std::out_of_range("token id " + std::to_string(id) + " out of range");
    if (is_special(id)) out += special_name(id);
    else out += strings_[id - kFirstByteId];
  }
  return out;
}

Vocab train_bpe(const std::vector<std::string>& corpus_texts, int vocab_size) {
  if (vocab_size < Vocab::kFirstMergeId)
    throw std::invalid_argument("vocab_size must be at least " +
                                std::to_string(Vocab::kFirstMergeId));
  std::vector<std::vector<int>> seqs;
  seqs.reserve(corpus_texts.size());
  for (const auto& t : corpus_texts) {
    std::vector<int> s;
    s.reserve(t.size());
    for (unsigned char c : t) s.push_back(Vocab::kFirstByteId + c);
    if (s.size() >= 2) seqs.push_back(std::move(s));
  }

  Vocab v;
  int n_merges = vocab_size - Vocab::kFirstMergeId;
  for (int round = 0; round < n_merges; ++round) {
    std::unordered_map<uint64_t, long> counts;
    for (const auto& s : seqs)
      for (size_t i = 0; i + 1 < s.size(); ++i)
        ++counts[(static_cast<uint64_t>(s[i]) << 32) | static_cast<uint32_t>(s[i + 1])];

    uint64_t best_key = 0;
    long best_count = 0;
    std::string best_str;
    for (const auto& [key, count] : counts) {
      if (count < 2 || count < best_count) continue;  // a merge must occur at least twice
      int a = static_cast<int>(key >> 32), b = static_cast<int>(key & 0xffffffffu);
      std::string s = v.strings_[a - Vocab::kFirstByteId] + v.strings_[b - Vocab::kFirstByteId];
      if (count > best_count || (count == best_count && (best_str.empty() || s < best_str))) {
        best_count = count;
        best_key = key;
        best_str = std::move(s);
      }
    }
    if (best_str.empty()) break;

    int a = static_cast<int>(best_key >> 32), b = static_cast<int>(best_key & 0xffffffffu);
    int merged = Vocab::kFirstMergeId + static_cast<int>(v.merges_.size());
    v.merges_.emplace_back(a, b);
    v.strings_.push_back(best_str);
    for (auto& s : seqs) {
      size_t w = 0;
      for (size_t i = 0; i < s.size();) {
        if (i + 1 < s.size() && s[i] == a && s[i + 1] == b) {
          s[w++] = merged;
          i += 2;
        } else {
          s[w++] = s[i++];
        }
      }
      s.resize(w);
    }
  }
  v.rebuild_tables();
  return v;
}

namespace {
using json = nlohmann::ordered_json;
}

void Vocab::save(const std::string& path) const {
  json j;
  j["format"] = "tabloid-bpe";
  j["version"] = 1;
  j["vocab_size"] = size();
  json specials = json::object();
  for (int i = 0; i < kNumSpecials; ++i) specials[special_name(i)] = i;
  j["specials"] = specials;
  json merges = json::array();
  for (auto [a, b] : merges_) merges.push_back(json::array({a, b}));
  j["merges"] = merges;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object() || j.value("format", "") != "tabloid-bpe" ||
      j.value("version", 0) != 1)
    throw std::runtime_error("'" + path + "' is not a v1 vocabulary file");
  std::vector<std::pair<int, int>> merges;
  for (const auto& m : j.at("merges")) merges.emplace_back(m.at(0).get<int>(), m.at(1).get<int>());
  Vocab v = from_merges(merges);
  if (j.contains("vocab_size") && j["vocab_size"].get<int>() != v.size())
    throw std::runtime_error("vocabulary size mismatch in '" + path + "'");
  return v;
}

}  // namespace tabloid
