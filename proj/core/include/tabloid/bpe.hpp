// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tabloid {

/// Reserved token ids. They occupy the 12 lowest ids; plain text can never
/// encode to them because encode() works purely on bytes and merges.
enum Special : int {
  kStartDomain = 0,
  kEndDomain = 1,
  kStartDate = 2,
  kEndDate = 3,
  kStartAuthors = 4,
  kEndAuthors = 5,
  kStartHeadline = 6,
  kEndHeadline = 7,
  kStartBody = 8,
  kEndBody = 9,
  kCls = 10,
  kPad = 11,
};
constexpr int kNumSpecials = 12;

/// Printable placeholder used when decoding a special id.
const char* special_name(int id);

/// Byte-level BPE vocabulary. Id layout: [0,12) specials, [12,268) the 256
/// single bytes, [268,...) merge products in training order.
class Vocab {
 public:
  static constexpr int kFirstByteId = kNumSpecials;
  static constexpr int kFirstMergeId = kNumSpecials + 256;

  Vocab();  // bytes + specials only, no merges

  /// Rebuilds the merged-token table from (left id, right id) pairs.
  static Vocab from_merges(const std::vector<std::pair<int, int>>& merges);

  int size() const { return kFirstMergeId + static_cast<int>(merges_.size()); }
  bool is_special(int id) const { return id >= 0 && id < kNumSpecials; }
  const std::vector<std::pair<int, int>>& merges() const { return merges_; }

  /// Byte string of a non-special token id.
  const std::string& token_string(int id) const;

  /// Text -> token ids. Never emits special ids. decode(encode(s)) == s.
  std::vector<int> encode(std::string_view text) const;

  /// Token ids -> text. Special ids render as their placeholder names.
  /// Throws std::out_of_range on ids outside the vocabulary.
  std::string decode(const std::vector<int>& ids) const;

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

  bool operator==(const Vocab& other) const { return merges_ == other.merges_; }

 private:
  std::vector<std::pair<int, int>> merges_;
  std::vector<std::string> strings_;  // indexed by id - kFirstByteId
  void rebuild_tables();
  friend Vocab train_bpe(const std::vector<std::string>&, int);
};

/// Trains a byte-level BPE on the corpus. Merges are chosen by descending
/// pair frequency, ties broken lexicographically on the pair's byte
/// strings; training stops early once no adjacent pair occurs twice.
/// vocab_size must be at least 268 (bytes + specials).
Vocab train_bpe(const std::vector<std::string>& corpus_texts, int vocab_size);

}  // namespace tabloid
