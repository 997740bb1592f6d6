// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "tabloid/model.hpp"

namespace tabloid {

/// Incremental causal decoding with per-layer key/value caches. One token
/// per step; logits are produced from the same weights and kernel order on
/// every call, so replaying a token sequence through a fresh Decoder
/// reproduces the generation-time logits bit for bit.
template <class T>
class Decoder {
 public:
  explicit Decoder(const TransformerLM<T>& model);

  void reset() { pos_ = 0; }
  int pos() const { return pos_; }
  int capacity() const;

  /// Appends `token` at the current position and returns the next-token
  /// logits (size vocab). The returned reference is valid until the next
  /// call. Throws when the cache is full or the id is out of range.
  const std::vector<T>& step(int token);

  /// Steps through all tokens; returns the logits after the last one.
  const std::vector<T>& feed(std::span<const int> tokens);

 private:
  const TransformerLM<T>* model_;
  int pos_ = 0;
  std::vector<std::vector<T>> kcache_, vcache_;  // per layer: [h][max_seq][hd]
  std::vector<T> x_, norm_, qkv_, ctx_, att_, mlp_, mlp2_, logits_;
};

}  // namespace tabloid
