// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tabloid/corpus.hpp"

namespace tabloid {

struct NgramConfig {
  int feature_dim = 1 << 18;  // hashed feature buckets
  int n_min = 1, n_max = 2;   // word n-gram orders
  int epochs = 10;
  double lr = 0.5;
  double l2 = 1e-6;
  uint64_t seed = 0;
};

/// Hashed bag-of-ngrams logistic regression over the article text
/// (all five fields concatenated), trained by stochastic gradient
/// descent. The linear-classifier counterpart of the neural detector;
/// it is scored with the same accuracy functions.
class NgramClassifier {
 public:
  explicit NgramClassifier(const NgramConfig& cfg = {});

  /// Lowercased alphanumeric word split.
  static std::vector<std::string> words(const std::string& text);

  /// Hashed feature indices of the article's word 1..n grams.
  std::vector<uint32_t> features(const ArticleRecord& a) const;

  void train(const std::vector<LabeledArticle>& data);

  double p_machine(const ArticleRecord& a) const;

  const NgramConfig& config() const { return cfg_; }

 private:
  NgramConfig cfg_;
  std::vector<float> w_;
  double bias_ = 0;
};

}  // namespace tabloid
