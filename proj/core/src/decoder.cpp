// SPDX-License-Identifier: Apache-2.0
#include "tabloid/decoder.hpp"

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

namespace tabloid {

namespace {

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ERow = Eigen::Matrix<T, 1, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
void layernorm_vec(const std::vector<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                   std::vector<T>& out) {
  int d = static_cast<int>(x.size());
  T mu = 0;
  for (int j = 0; j < d; ++j) mu += x[j];
  mu /= d;
  T var = 0;
  for (int j = 0; j < d; ++j) {
    T c = x[j] - mu;
    var += c * c;
  }
  var /= d;
  T r = T(1) / std::sqrt(var + T(1e-5));
  for (int j = 0; j < d; ++j) out[j] = (x[j] - mu) * r * gain.v[j] + bias.v[j];
}

template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(0.7071067811865475244)));
}

// y = x * W + b for a single row vector.
template <class T>
void affine_row(const std::vector<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                std::vector<T>& y) {
  int in = w.shape[0], out = w.shape[1];
  Eigen::Map<const ERow<T>> xm(x.data(), in);
  Eigen::Map<const EMat<T>> wm(w.v.data(), in, out);
  Eigen::Map<ERow<T>> ym(y.data(), out);
  ym.noalias() = xm * wm;
  for (int j = 0; j < out; ++j) y[j] += b.v[j];
}

}  // namespace

template <class T>
Decoder<T>::Decoder(const TransformerLM<T>& model) : model_(&model) {
  const ModelConfig& c = model.config();
  size_t per_layer = static_cast<size_t>(c.n_heads) * c.max_seq * c.head_dim();
  kcache_.assign(c.layers, std::vector<T>(per_layer));
  vcache_.assign(c.layers, std::vector<T>(per_layer));
  x_.resize(c.d_model);
  norm_.resize(c.d_model);
  qkv_.resize(3 * c.d_model);
  ctx_.resize(c.d_model);
  att_.resize(c.max_seq);
  mlp_.resize(4 * c.d_model);
  mlp2_.resize(4 * c.d_model);
  logits_.resize(c.vocab_size);
}

template <class T>
int Decoder<T>::capacity() const {
  return model_->config().max_seq;
}

template <class T>
const std::vector<T>& Decoder<T>::step(int token) {
  const ModelConfig& c = model_->config();
  int d = c.d_model, h = c.n_heads, hd = c.head_dim(), N = c.max_seq;
  if (pos_ >= N) throw std::runtime_error("decoder cache full at max_seq " + std::to_string(N));
  if (token < 0 || token >= c.vocab_size)
    throw std::invalid_argument("token id " + std::to_string(token) + " out of range");
  T scale = T(1) / std::sqrt(static_cast<T>(hd));

  const T* te = model_->wte_.v.data() + static_cast<size_t>(token) * d;
  const T* pe = model_->wpe_.v.data() + static_cast<size_t>(pos_) * d;
  for (int j = 0; j < d; ++j) x_[j] = te[j] + pe[j];

  for (int l = 0; l < c.layers; ++l) {
    const auto& B = model_->blocks_[l];
    layernorm_vec(x_, B.ln1_g, B.ln1_b, norm_);
    affine_row(norm_, B.w_qkv, B.b_qkv, qkv_);

    T* kc = kcache_[l].data();
    T* vc = vcache_[l].data();
    for (int hh = 0; hh < h; ++hh) {
      T* krow = kc + (static_cast<size_t>(hh) * N + pos_) * hd;
      T* vrow = vc + (static_cast<size_t>(hh) * N + pos_) * hd;
      for (int j = 0; j < hd; ++j) {
        krow[j] = qkv_[d + hh * hd + j];
        vrow[j] = qkv_[2 * d + hh * hd + j];
      }
    }

    for (int hh = 0; hh < h; ++hh) {
      const T* q = qkv_.data() + hh * hd;
      const T* khead = kc + static_cast<size_t>(hh) * N * hd;
      const T* vhead = vc + static_cast<size_t>(hh) * N * hd;
      // scores over keys 0..pos_
      T mx = T(0);
      for (int t = 0; t <= pos_; ++t) {
        const T* krow = khead + static_cast<size_t>(t) * hd;
        T s = 0;
        for (int j = 0; j < hd; ++j) s += q[j] * krow[j];
        s *= scale;
        att_[t] = s;
        mx = t == 0 ? s : std::max(mx, s);
      }
      T sum = 0;
      for (int t = 0; t <= pos_; ++t) {
        att_[t] = std::exp(att_[t] - mx);
        sum += att_[t];
      }
      T inv = T(1) / sum;
      T* out = ctx_.data() + hh * hd;
      for (int j = 0; j < hd; ++j) out[j] = 0;
      for (int t = 0; t <= pos_; ++t) {
        T p = att_[t] * inv;
        const T* vrow = vhead + static_cast<size_t>(t) * hd;
        for (int j = 0; j < hd; ++j) out[j] += p * vrow[j];
      }
    }

    affine_row(ctx_, B.w_ao, B.b_ao, norm_);  // reuse norm_ as the proj output
    for (int j = 0; j < d; ++j) x_[j] += norm_[j];

    layernorm_vec(x_, B.ln2_g, B.ln2_b, norm_);
    affine_row(norm_, B.w_fc, B.b_fc, mlp_);
    for (int j = 0; j < 4 * d; ++j) mlp2_[j] = gelu(mlp_[j]);
    affine_row(mlp2_, B.w_fp, B.b_fp, norm_);
    for (int j = 0; j < d; ++j) x_[j] += norm_[j];
  }

  layernorm_vec(x_, model_->lnf_g_, model_->lnf_b_, norm_);
  affine_row(norm_, model_->w_lm_, model_->b_lm_, logits_);
  ++pos_;
  return logits_;
}

template <class T>
const std::vector<T>& Decoder<T>::feed(std::span<const int> tokens) {
  if (tokens.empty()) throw std::invalid_argument("feed requires at least one token");
  for (int t : tokens) step(t);
  return logits_;
}

template class Decoder<float>;
template class Decoder<double>;

}  // namespace tabloid
