// SPDX-License-Identifier: Apache-2.0
#include "tabloid/ngram.hpp"

#include <cctype>
#include <cmath>
#include <stdexcept>

#include "tabloid/fields.hpp"
#include "tabloid/rng.hpp"

namespace tabloid {

NgramClassifier::NgramClassifier(const NgramConfig& cfg) : cfg_(cfg) {
  if (cfg_.feature_dim < 2 || cfg_.n_min < 1 || cfg_.n_max < cfg_.n_min)
    throw std::invalid_argument("bad ngram config");
  w_.assign(cfg_.feature_dim, 0.0f);
}

std::vector<std::string> NgramClassifier::words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<uint32_t> NgramClassifier::features(const ArticleRecord& a) const {
  std::string text;
  for (int f = 0; f < kNumFields; ++f) {
    text += field_text(a, static_cast<Field>(f));
    text += ' ';
  }
  std::vector<std::string> ws = words(text);
  std::vector<uint32_t> out;
  for (int n = cfg_.n_min; n <= cfg_.n_max; ++n) {
    if (static_cast<size_t>(n) > ws.size()) break;
    for (size_t i = 0; i + n <= ws.size(); ++i) {
      uint64_t h = fnv1a64(std::to_string(n));
      for (int j = 0; j < n; ++j) h = fnv1a64(ws[i + j].data(), ws[i + j].size(), h ^ 0x1f);
      out.push_back(static_cast<uint32_t>(h % cfg_.feature_dim));
    }
  }
  return out;
}

namespace {

double raw_score(const std::vector<float>& w, double bias, const std::vector<uint32_t>& feats) {
  if (feats.empty()) return bias;
  double s = 0;
  for (uint32_t f : feats) s += w[f];
  return s / static_cast<double>(feats.size()) + bias;
}

}  // namespace

void NgramClassifier::train(const std::vector<LabeledArticle>& data) {
  if (data.empty()) throw std::invalid_argument("ngram train: empty dataset");
  std::vector<std::vector<uint32_t>> feats(data.size());
  std::vector<int> labels(data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    feats[i] = features(data[i].article);
    labels[i] = data[i].label == Label::Machine ? 1 : 0;
  }
  Rng rng(cfg_.seed);
  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    rng.shuffle(order);
    double lr = cfg_.lr / (1.0 + epoch);
    for (size_t ix : order) {
      const auto& f = feats[ix];
      double s = raw_score(w_, bias_, f);
      double p = 1.0 / (1.0 + std::exp(-s));
      double err = p - labels[ix];  // d(logloss)/d(score)
      if (!f.empty()) {
        double g = err / static_cast<double>(f.size());
        for (uint32_t j : f) w_[j] = static_cast<float>(w_[j] * (1.0 - lr * cfg_.l2) - lr * g);
      }
      bias_ -= lr * err;
    }
  }
}

double NgramClassifier::p_machine(const ArticleRecord& a) const {
  double s = raw_score(w_, bias_, features(a));
  return 1.0 / (1.0 + std::exp(-s));
}

}  // namespace tabloid
