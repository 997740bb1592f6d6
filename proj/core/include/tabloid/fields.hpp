// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tabloid/bpe.hpp"
#include "tabloid/corpus.hpp"
#include "tabloid/rng.hpp"

namespace tabloid {

/// Article fields in canonical order: domain < date < authors < headline < body.
enum class Field : int { Domain = 0, Date = 1, Authors = 2, Headline = 3, Body = 4 };
constexpr int kNumFields = 5;

const char* field_name(Field f);
int field_start_id(Field f);  // the <|start-...|> special id
int field_end_id(Field f);    // the <|end-...|> special id

/// Small set of fields with canonical-order iteration.
class FieldSet {
 public:
  FieldSet() = default;
  FieldSet(std::initializer_list<Field> fields) {
    for (Field f : fields) insert(f);
  }
  static FieldSet all() { return {Field::Domain, Field::Date, Field::Authors, Field::Headline, Field::Body}; }
  static FieldSet metadata() { return {Field::Domain, Field::Date, Field::Authors, Field::Headline}; }

  void insert(Field f) { bits_ |= 1u << static_cast<int>(f); }
  void erase(Field f) { bits_ &= ~(1u << static_cast<int>(f)); }
  bool contains(Field f) const { return bits_ & (1u << static_cast<int>(f)); }
  bool empty() const { return bits_ == 0; }
  int size() const { return __builtin_popcount(bits_); }
  FieldSet operator|(FieldSet o) const { return FieldSet(bits_ | o.bits_); }
  FieldSet operator&(FieldSet o) const { return FieldSet(bits_ & o.bits_); }
  bool operator==(const FieldSet&) const = default;

 private:
  explicit FieldSet(uint8_t bits) : bits_(bits) {}
  uint8_t bits_ = 0;
};

/// Fields of the set, ascending in the canonical order.
std::vector<Field> canonical_sort(FieldSet fields);

/// Authors join/split separator used when serializing the author list
/// into a single token stream.
inline constexpr const char* kAuthorSep = "; ";

std::string field_text(const ArticleRecord& a, Field f);
void set_field_text(ArticleRecord& a, Field f, const std::string& text);

/// Per-field token ids of one article, so repeated example assembly does
/// not re-run BPE.
struct ArticleTokens {
  std::array<std::vector<int>, kNumFields> content;
};
ArticleTokens tokenize_fields(const Vocab& vocab, const ArticleRecord& a);

/// Concatenation over canonical_sort(context) of
/// <|start-f|> content(f) <|end-f|> blocks.
std::vector<int> encode_context(const Vocab& vocab, const ArticleRecord& a, FieldSet context);
std::vector<int> encode_context(const ArticleTokens& toks, FieldSet context);

struct DropoutConfig {
  double per_field_drop = 0.10;  // each metadata field, independently
  double body_only_prob = 0.35;  // keep only the body, evaluated first
};

/// The random part of training-example construction, separated out so the
/// layout rules can be driven deterministically in tests.
struct ExamplePlan {
  FieldSet survivors;
  FieldSet first_half;   // F1, the simulated context
  FieldSet second_half;  // F2, the simulated generation targets
};

/// Draws dropout and the uniform partition of the surviving fields.
/// The body-only event fires first and supersedes per-field dropout;
/// the body itself is exempt from the 10% individual dropout.
ExamplePlan plan_training_example(FieldSet present, Rng& rng, const DropoutConfig& dropout);

struct EncodedExample {
  std::vector<int> input_ids;
  std::vector<uint8_t> loss_mask;  // 1 = position contributes to the LM loss
  // Span [start, end) of each surviving field's block (start token through
  // end token) in input_ids. Fields fully cut by truncation are absent.
  std::map<Field, std::pair<int, int>> boundaries;
  FieldSet first_half, second_half;
};

/// Lays out F1 blocks then F2 blocks, both canonical-order, truncated to
/// max_len from the right (a truncated field keeps its start token and
/// loses its end token). The loss mask is true everywhere.
EncodedExample build_training_example(const ArticleTokens& toks, const ExamplePlan& plan,
                                      int max_len);

/// plan + build, with bounded resampling when every surviving block is
/// empty of content. Throws std::runtime_error if no non-empty example can
/// be drawn.
EncodedExample make_training_example(const Vocab& vocab, const ArticleRecord& a, Rng& rng,
                                     const DropoutConfig& dropout, int max_len);

/// Context blocks followed by the target's start token. The target must
/// not be part of the context.
std::vector<int> inference_prompt(const Vocab& vocab, const ArticleRecord& context_article,
                                  FieldSet context, Field target);

/// Decoded text strictly between <|start-target|> and the first subsequent
/// <|end-target|> (or the end of the sequence when generation hit the cap).
/// Throws std::invalid_argument if the start token is absent.
std::string extract_field(const Vocab& vocab, const std::vector<int>& ids, Field target);

}  // namespace tabloid
