// SPDX-License-Identifier: Apache-2.0
#include "tabloid/model.hpp"

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

#include "tabloid/bpe.hpp"
#include "tabloid/rng.hpp"

namespace tabloid {

namespace {

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using EMap = Eigen::Map<EMat<T>>;
template <class T>
using ECMap = Eigen::Map<const EMat<T>>;

template <class T>
EMap<T> vmap(Tensor<T>& t, int r, int c) {
  return EMap<T>(t.v.data(), r, c);
}
template <class T>
ECMap<T> vmap(const Tensor<T>& t, int r, int c) {
  return ECMap<T>(t.v.data(), r, c);
}
template <class T>
EMap<T> gmap(Tensor<T>& t, int r, int c) {
  return EMap<T>(t.g.data(), r, c);
}

constexpr double kLnEps = 1e-5;

template <class T>
void layernorm_forward(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, int n,
                       int d, Tensor<T>& out, Tensor<T>& mean, Tensor<T>& rstd) {
  for (int i = 0; i < n; ++i) {
    const T* xi = x.v.data() + static_cast<size_t>(i) * d;
    T* yi = out.v.data() + static_cast<size_t>(i) * d;
    T mu = 0;
    for (int j = 0; j < d; ++j) mu += xi[j];
    mu /= d;
    T var = 0;
    for (int j = 0; j < d; ++j) {
      T c = xi[j] - mu;
      var += c * c;
    }
    var /= d;
    T r = T(1) / std::sqrt(var + T(kLnEps));
    for (int j = 0; j < d; ++j) yi[j] = (xi[j] - mu) * r * gain.v[j] + bias.v[j];
    mean.v[i] = mu;
    rstd.v[i] = r;
  }
}

/// Adds the input gradient into dx_accum and accumulates gain/bias grads.
template <class T>
void layernorm_backward(const Tensor<T>& dy, const Tensor<T>& x, const Tensor<T>& mean,
                        const Tensor<T>& rstd, Tensor<T>& gain, Tensor<T>& bias, int n, int d,
                        Tensor<T>& dx_accum) {
  for (int i = 0; i < n; ++i) {
    const T* dyi = dy.v.data() + static_cast<size_t>(i) * d;
    const T* xi = x.v.data() + static_cast<size_t>(i) * d;
    T* dxi = dx_accum.v.data() + static_cast<size_t>(i) * d;
    T mu = mean.v[i], r = rstd.v[i];
    T m1 = 0, m2 = 0;
    for (int j = 0; j < d; ++j) {
      T xhat = (xi[j] - mu) * r;
      T dxhat = dyi[j] * gain.v[j];
      m1 += dxhat;
      m2 += dxhat * xhat;
      gain.g[j] += dyi[j] * xhat;
      bias.g[j] += dyi[j];
    }
    m1 /= d;
    m2 /= d;
    for (int j = 0; j < d; ++j) {
      T xhat = (xi[j] - mu) * r;
      T dxhat = dyi[j] * gain.v[j];
      dxi[j] += r * (dxhat - m1 - xhat * m2);
    }
  }
}

template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(0.7071067811865475244)));
}

template <class T>
T gelu_grad(T x) {
  T cdf = T(0.5) * (T(1) + std::erf(x * T(0.7071067811865475244)));
  T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014326779);
  return cdf + x * pdf;
}

template <class T>
void ensure_shape(Tensor<T>& t, std::vector<int> shape) {
  t.shape = std::move(shape);
  t.v.resize(t.numel());
}

}  // namespace

ModelConfig ModelConfig::from_preset(const std::string& name, int vocab_size) {
  ModelConfig c;
  c.preset = name;
  c.vocab_size = vocab_size;
  c.max_seq = 256;
  if (name == "toy-base") {
    c.layers = 4;
    c.d_model = 128;
    c.n_heads = 4;
  } else if (name == "toy-large") {
    c.layers = 6;
    c.d_model = 192;
    c.n_heads = 6;
  } else if (name == "toy-mega") {
    c.layers = 8;
    c.d_model = 256;
    c.n_heads = 8;
  } else {
    throw std::invalid_argument("unknown preset '" + name +
                                "' (expected toy-base, toy-large or toy-mega)");
  }
  c.check();
  return c;
}

void ModelConfig::check() const {
  if (layers < 1 || d_model < 1 || n_heads < 1 || vocab_size < 1 || max_seq < 1)
    throw std::invalid_argument("model dimensions must be positive");
  if (d_model % n_heads != 0)
    throw std::invalid_argument("d_model must be divisible by n_heads");
}

template <class T>
TransformerLM<T>::TransformerLM(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.check();
  int d = cfg_.d_model, V = cfg_.vocab_size, N = cfg_.max_seq;
  wte_ = Tensor<T>({V, d});
  wpe_ = Tensor<T>({N, d});
  blocks_.resize(cfg_.layers);
  for (auto& b : blocks_) {
    b.ln1_g = Tensor<T>({d});
    b.ln1_b = Tensor<T>({d});
    b.w_qkv = Tensor<T>({d, 3 * d});
    b.b_qkv = Tensor<T>({3 * d});
    b.w_ao = Tensor<T>({d, d});
    b.b_ao = Tensor<T>({d});
    b.ln2_g = Tensor<T>({d});
    b.ln2_b = Tensor<T>({d});
    b.w_fc = Tensor<T>({d, 4 * d});
    b.b_fc = Tensor<T>({4 * d});
    b.w_fp = Tensor<T>({4 * d, d});
    b.b_fp = Tensor<T>({d});
  }
  lnf_g_ = Tensor<T>({d});
  lnf_b_ = Tensor<T>({d});
  w_lm_ = Tensor<T>({d, V});
  b_lm_ = Tensor<T>({V});
  w_det_ = Tensor<T>({d, 2});
  b_det_ = Tensor<T>({2});
  for (auto& p : params()) p.tensor->alloc_grad();
}

template <class T>
void TransformerLM<T>::init(uint64_t seed) {
  Rng rng(seed);
  auto fill_normal = [&rng](Tensor<T>& t, double std) {
    for (auto& x : t.v) x = static_cast<T>(rng.normal() * std);
  };
  auto fill_const = [](Tensor<T>& t, T c) { std::fill(t.v.begin(), t.v.end(), c); };
  double resid_scale = 1.0 / std::sqrt(2.0 * cfg_.layers);
  fill_normal(wte_, 0.02);
  fill_normal(wpe_, 0.02);
  for (auto& b : blocks_) {
    fill_const(b.ln1_g, T(1));
    fill_const(b.ln1_b, T(0));
    fill_normal(b.w_qkv, 0.02);
    fill_const(b.b_qkv, T(0));
    fill_normal(b.w_ao, 0.02 * resid_scale);
    fill_const(b.b_ao, T(0));
    fill_const(b.ln2_g, T(1));
    fill_const(b.ln2_b, T(0));
    fill_normal(b.w_fc, 0.02);
    fill_const(b.b_fc, T(0));
    fill_normal(b.w_fp, 0.02 * resid_scale);
    fill_const(b.b_fp, T(0));
  }
  fill_const(lnf_g_, T(1));
  fill_const(lnf_b_, T(0));
  fill_normal(w_lm_, 0.02);
  fill_const(b_lm_, T(0));
  fill_const(w_det_, T(0));
  fill_const(b_det_, T(0));
}

template <class T>
std::vector<ParamRef<T>> TransformerLM<T>::params() {
  std::vector<ParamRef<T>> out;
  out.push_back({"wte", &wte_});
  out.push_back({"wpe", &wpe_});
  for (size_t l = 0; l < blocks_.size(); ++l) {
    auto& b = blocks_[l];
    std::string p = "h" + std::to_string(l) + ".";
    out.push_back({p + "ln1.g", &b.ln1_g});
    out.push_back({p + "ln1.b", &b.ln1_b});
    out.push_back({p + "attn.w_qkv", &b.w_qkv});
    out.push_back({p + "attn.b_qkv", &b.b_qkv});
    out.push_back({p + "attn.w_proj", &b.w_ao});
    out.push_back({p + "attn.b_proj", &b.b_ao});
    out.push_back({p + "ln2.g", &b.ln2_g});
    out.push_back({p + "ln2.b", &b.ln2_b});
    out.push_back({p + "mlp.w_fc", &b.w_fc});
    out.push_back({p + "mlp.b_fc", &b.b_fc});
    out.push_back({p + "mlp.w_proj", &b.w_fp});
    out.push_back({p + "mlp.b_proj", &b.b_fp});
  }
  out.push_back({"lnf.g", &lnf_g_});
  out.push_back({"lnf.b", &lnf_b_});
  out.push_back({"lm_head.w", &w_lm_});
  out.push_back({"lm_head.b", &b_lm_});
  out.push_back({"det.w", &w_det_});
  out.push_back({"det.b", &b_det_});
  return out;
}

template <class T>
void TransformerLM<T>::zero_grad() {
  for (auto& p : params()) p.tensor->zero_grad();
}

template <class T>
int64_t TransformerLM<T>::num_params() const {
  int64_t n = 0;
  auto* self = const_cast<TransformerLM<T>*>(this);
  for (auto& p : self->params()) n += p.tensor->numel();
  return n;
}

template <class T>
Tensor<T>& TransformerLM<T>::tensor(const std::string& name) {
  for (auto& p : params())
    if (p.name == name) return *p.tensor;
  throw std::out_of_range("no parameter named '" + name + "'");
}

namespace {

template <class T>
void ensure_acts(Acts<T>& a, const ModelConfig& c, int n) {
  int d = c.d_model, hd = c.head_dim(), h = c.n_heads, V = c.vocab_size;
  a.n = n;
  ensure_shape(a.x0, {n, d});
  a.layers.resize(c.layers);
  for (auto& L : a.layers) {
    ensure_shape(L.ln1_out, {n, d});
    ensure_shape(L.ln1_mean, {n});
    ensure_shape(L.ln1_rstd, {n});
    ensure_shape(L.q, {h * n, hd});
    ensure_shape(L.k, {h * n, hd});
    ensure_shape(L.v, {h * n, hd});
    ensure_shape(L.att, {h * n, n});
    ensure_shape(L.ctx, {n, d});
    ensure_shape(L.x_mid, {n, d});
    ensure_shape(L.ln2_out, {n, d});
    ensure_shape(L.ln2_mean, {n});
    ensure_shape(L.ln2_rstd, {n});
    ensure_shape(L.mlp_pre, {n, 4 * d});
    ensure_shape(L.mlp_act, {n, 4 * d});
    ensure_shape(L.x_out, {n, d});
  }
  ensure_shape(a.lnf_out, {n, d});
  ensure_shape(a.lnf_mean, {n});
  ensure_shape(a.lnf_rstd, {n});
  ensure_shape(a.logits, {n, V});
  ensure_shape(a.dx, {n, d});
  ensure_shape(a.dx2, {n, d});
  ensure_shape(a.d_qkv, {n, 3 * d});
  ensure_shape(a.d_ctx, {n, d});
  ensure_shape(a.d_mlp, {n, 4 * d});
  ensure_shape(a.d_scores, {n, n});
  ensure_shape(a.d_head, {n, hd});
  ensure_shape(a.dq, {h * n, hd});
  ensure_shape(a.dk, {h * n, hd});
  ensure_shape(a.dv, {h * n, hd});
}

}  // namespace

template <class T>
const Tensor<T>& TransformerLM<T>::forward(std::span<const int> ids, Acts<T>& acts) const {
  int n = static_cast<int>(ids.size());
  if (n == 0) throw std::invalid_argument("empty input sequence");
  if (n > cfg_.max_seq)
    throw std::invalid_argument("sequence length " + std::to_string(n) +
                                " exceeds max_seq " + std::to_string(cfg_.max_seq));
  for (int id : ids)
    if (id < 0 || id >= cfg_.vocab_size)
      throw std::invalid_argument("token id " + std::to_string(id) + " out of range");

  int d = cfg_.d_model, h = cfg_.n_heads, hd = cfg_.head_dim(), V = cfg_.vocab_size;
  T scale = T(1) / std::sqrt(static_cast<T>(hd));
  ensure_acts(acts, cfg_, n);
  acts.ids.assign(ids.begin(), ids.end());

  for (int t = 0; t < n; ++t) {
    const T* te = wte_.v.data() + static_cast<size_t>(ids[t]) * d;
    const T* pe = wpe_.v.data() + static_cast<size_t>(t) * d;
    T* x = acts.x0.v.data() + static_cast<size_t>(t) * d;
    for (int j = 0; j < d; ++j) x[j] = te[j] + pe[j];
  }

  const Tensor<T>* x_in = &acts.x0;
  for (int l = 0; l < cfg_.layers; ++l) {
    const Block& B = blocks_[l];
    auto& A = acts.layers[l];

    layernorm_forward(*x_in, B.ln1_g, B.ln1_b, n, d, A.ln1_out, A.ln1_mean, A.ln1_rstd);

    // qkv = ln1_out * w_qkv + b_qkv, scattered into head-major q, k, v
    {
      Tensor<T>& qkv = acts.d_qkv;  // reuse scratch for the fused projection
      vmap(qkv, n, 3 * d).noalias() = vmap(A.ln1_out, n, d) * vmap(B.w_qkv, d, 3 * d);
      for (int t = 0; t < n; ++t) {
        const T* row = qkv.v.data() + static_cast<size_t>(t) * 3 * d;
        for (int hh = 0; hh < h; ++hh) {
          T* qrow = A.q.v.data() + (static_cast<size_t>(hh) * n + t) * hd;
          T* krow = A.k.v.data() + (static_cast<size_t>(hh) * n + t) * hd;
          T* vrow = A.v.v.data() + (static_cast<size_t>(hh) * n + t) * hd;
          for (int j = 0; j < hd; ++j) {
            qrow[j] = row[hh * hd + j] + B.b_qkv.v[hh * hd + j];
            krow[j] = row[d + hh * hd + j] + B.b_qkv.v[d + hh * hd + j];
            vrow[j] = row[2 * d + hh * hd + j] + B.b_qkv.v[2 * d + hh * hd + j];
          }
        }
      }
    }

    for (int hh = 0; hh < h; ++hh) {
      ECMap<T> q(A.q.v.data() + static_cast<size_t>(hh) * n * hd, n, hd);
      ECMap<T> k(A.k.v.data() + static_cast<size_t>(hh) * n * hd, n, hd);
      ECMap<T> v(A.v.v.data() + static_cast<size_t>(hh) * n * hd, n, hd);
      EMap<T> att(A.att.v.data() + static_cast<size_t>(hh) * n * n, n, n);
      att.noalias() = q * k.transpose();
      // causal softmax over keys 0..i, in place
      for (int i = 0; i < n; ++i) {
        T* row = A.att.v.data() + (static_cast<size_t>(hh) * n + i) * n;
        T mx = row[0] * scale;
        for (int j = 1; j <= i; ++j) mx = std::max(mx, row[j] * scale);
        T sum = 0;
        for (int j = 0; j <= i; ++j) {
          row[j] = std::exp(row[j] * scale - mx);
          sum += row[j];
        }
        T inv = T(1) / sum;
        for (int j = 0; j <= i; ++j) row[j] *= inv;
        for (int j = i + 1; j < n; ++j) row[j] = 0;
      }
      // ctx_h = att * v, written into the head's column block
      Eigen::Map<EMat<T>, 0, Eigen::OuterStride<>> ctx(
          A.ctx.v.data() + static_cast<size_t>(hh) * hd, n, hd, Eigen::OuterStride<>(d));
      ECMap<T> att_c(A.att.v.data() + static_cast<size_t>(hh) * n * n, n, n);
      ctx.noalias() = att_c * v;
    }

    // attention projection + residual
    vmap(A.x_mid, n, d).noalias() = vmap(A.ctx, n, d) * vmap(B.w_ao, d, d);
    for (int t = 0; t < n; ++t) {
      T* m = A.x_mid.v.data() + static_cast<size_t>(t) * d;
      const T* xi = x_in->v.data() + static_cast<size_t>(t) * d;
      for (int j = 0; j < d; ++j) m[j] += xi[j] + B.b_ao.v[j];
    }

    layernorm_forward(A.x_mid, B.ln2_g, B.ln2_b, n, d, A.ln2_out, A.ln2_mean, A.ln2_rstd);

    vmap(A.mlp_pre, n, 4 * d).noalias() = vmap(A.ln2_out, n, d) * vmap(B.w_fc, d, 4 * d);
    for (int t = 0; t < n; ++t) {
      T* p = A.mlp_pre.v.data() + static_cast<size_t>(t) * 4 * d;
      T* a = A.mlp_act.v.data() + static_cast<size_t>(t) * 4 * d;
      for (int j = 0; j < 4 * d; ++j) {
        p[j] += B.b_fc.v[j];
        a[j] = gelu(p[j]);
      }
    }

    vmap(A.x_out, n, d).noalias() = vmap(A.mlp_act, n, 4 * d) * vmap(B.w_fp, 4 * d, d);
    for (int t = 0; t < n; ++t) {
      T* o = A.x_out.v.data() + static_cast<size_t>(t) * d;
      const T* m = A.x_mid.v.data() + static_cast<size_t>(t) * d;
      for (int j = 0; j < d; ++j) o[j] += m[j] + B.b_fp.v[j];
    }
    x_in = &A.x_out;
  }

  layernorm_forward(*x_in, lnf_g_, lnf_b_, n, d, acts.lnf_out, acts.lnf_mean, acts.lnf_rstd);

  vmap(acts.logits, n, V).noalias() = vmap(acts.lnf_out, n, d) * vmap(w_lm_, d, V);
  for (int t = 0; t < n; ++t) {
    T* row = acts.logits.v.data() + static_cast<size_t>(t) * V;
    for (int j = 0; j < V; ++j) row[j] += b_lm_.v[j];
  }
  return acts.logits;
}

template <class T>
const Tensor<T>& TransformerLM<T>::hidden(const Acts<T>& acts) const {
  return acts.lnf_out;
}

template <class T>
std::array<T, 2> TransformerLM<T>::detect_logits(const Acts<T>& acts) const {
  if (acts.n == 0 || acts.ids.empty() || acts.ids.back() != kCls)
    throw std::invalid_argument("detection input must end with the CLS token");
  int d = cfg_.d_model;
  const T* hrow = acts.lnf_out.v.data() + static_cast<size_t>(acts.n - 1) * d;
  std::array<T, 2> out{b_det_.v[0], b_det_.v[1]};
  for (int j = 0; j < d; ++j) {
    out[0] += hrow[j] * w_det_.v[2 * j];
    out[1] += hrow[j] * w_det_.v[2 * j + 1];
  }
  return out;
}

template <class T>
void TransformerLM<T>::backward(Acts<T>& acts, const Tensor<T>& dlogits,
                                const std::array<T, 2>* dcls) {
  int n = acts.n, d = cfg_.d_model, h = cfg_.n_heads, hd = cfg_.head_dim(), V = cfg_.vocab_size;
  if (n == 0) throw std::logic_error("backward without a recorded forward");
  T scale = T(1) / std::sqrt(static_cast<T>(hd));

  // LM head
  gmap(w_lm_, d, V).noalias() += vmap(acts.lnf_out, n, d).transpose() * vmap(dlogits, n, V);
  gmap(b_lm_, 1, V).noalias() += vmap(dlogits, n, V).colwise().sum();
  vmap(acts.dx2, n, d).noalias() = vmap(dlogits, n, V) * vmap(w_lm_, d, V).transpose();

  // detection head feeds the CLS row of the final hidden state
  if (dcls) {
    const T* hrow = acts.lnf_out.v.data() + static_cast<size_t>(n - 1) * d;
    T* dxrow = acts.dx2.v.data() + static_cast<size_t>(n - 1) * d;
    for (int j = 0; j < d; ++j) {
      w_det_.g[2 * j] += hrow[j] * (*dcls)[0];
      w_det_.g[2 * j + 1] += hrow[j] * (*dcls)[1];
      dxrow[j] += w_det_.v[2 * j] * (*dcls)[0] + w_det_.v[2 * j + 1] * (*dcls)[1];
    }
    b_det_.g[0] += (*dcls)[0];
    b_det_.g[1] += (*dcls)[1];
  }

  const Tensor<T>& x_last = cfg_.layers ? acts.layers.back().x_out : acts.x0;
  std::fill(acts.dx.v.begin(), acts.dx.v.end(), T(0));
  layernorm_backward(acts.dx2, x_last, acts.lnf_mean, acts.lnf_rstd, lnf_g_, lnf_b_, n, d,
                     acts.dx);

  for (int l = cfg_.layers - 1; l >= 0; --l) {
    Block& B = blocks_[l];
    auto& A = acts.layers[l];
    const Tensor<T>& x_in = l ? acts.layers[l - 1].x_out : acts.x0;

    // MLP: x_out = x_mid + gelu(ln2_out*w_fc + b_fc)*w_fp + b_fp
    gmap(B.w_fp, 4 * d, d).noalias() +=
        vmap(A.mlp_act, n, 4 * d).transpose() * vmap(acts.dx, n, d);
    gmap(B.b_fp, 1, d).noalias() += vmap(acts.dx, n, d).colwise().sum();
    vmap(acts.d_mlp, n, 4 * d).noalias() = vmap(acts.dx, n, d) * vmap(B.w_fp, 4 * d, d).transpose();
    for (size_t i = 0; i < acts.d_mlp.v.size(); ++i)
      acts.d_mlp.v[i] *= gelu_grad(A.mlp_pre.v[i]);
    gmap(B.w_fc, d, 4 * d).noalias() +=
        vmap(A.ln2_out, n, d).transpose() * vmap(acts.d_mlp, n, 4 * d);
    gmap(B.b_fc, 1, 4 * d).noalias() += vmap(acts.d_mlp, n, 4 * d).colwise().sum();
    vmap(acts.dx2, n, d).noalias() = vmap(acts.d_mlp, n, 4 * d) * vmap(B.w_fc, d, 4 * d).transpose();
    // residual: dx (grad of x_out) flows into x_mid unchanged; add ln2 path
    layernorm_backward(acts.dx2, A.x_mid, A.ln2_mean, A.ln2_rstd, B.ln2_g, B.ln2_b, n, d,
                       acts.dx);

    // attention projection
    gmap(B.w_ao, d, d).noalias() += vmap(A.ctx, n, d).transpose() * vmap(acts.dx, n, d);
    gmap(B.b_ao, 1, d).noalias() += vmap(acts.dx, n, d).colwise().sum();
    vmap(acts.d_ctx, n, d).noalias() = vmap(acts.dx, n, d) * vmap(B.w_ao, d, d).transpose();

    for (int hh = 0; hh < h; ++hh) {
      // contiguous copy of this head's slice of d_ctx
      for (int t = 0; t < n; ++t) {
        const T* src = acts.d_ctx.v.data() + static_cast<size_t>(t) * d + hh * hd;
        T* dst = acts.d_head.v.data() + static_cast<size_t>(t) * hd;
        std::copy(src, src + hd, dst);
      }
      ECMap<T> q(A.q.v.data() + static_cast<size_t>(hh) * n * hd, n, hd);
      ECMap<T> k(A.k.v.data() + static_cast<size_t>(hh) * n * hd, n, hd);
      ECMap<T> v(A.v.v.data() + static_cast<size_t>(hh) * n * hd, n, hd);
      ECMap<T> att(A.att.v.data() + static_cast<size_t>(hh) * n * n, n, n);
      EMap<T> dq(acts.dq.v.data() + static_cast<size_t>(hh) * n * hd, n, hd);
      EMap<T> dk(acts.dk.v.data() + static_cast<size_t>(hh) * n * hd, n, hd);
      EMap<T> dv(acts.dv.v.data() + static_cast<size_t>(hh) * n * hd, n, hd);
      ECMap<T> dh(acts.d_head.v.data(), n, hd);

      vmap(acts.d_scores, n, n).noalias() = dh * v.transpose();
      dv.noalias() = att.transpose() * dh;
      // softmax backward row-wise; masked positions have p == 0
      for (int i = 0; i < n; ++i) {
        T* ds = acts.d_scores.v.data() + static_cast<size_t>(i) * n;
        const T* p = A.att.v.data() + (static_cast<size_t>(hh) * n + i) * n;
        T dot = 0;
        for (int j = 0; j <= i; ++j) dot += p[j] * ds[j];
        for (int j = 0; j <= i; ++j) ds[j] = p[j] * (ds[j] - dot) * scale;
        for (int j = i + 1; j < n; ++j) ds[j] = 0;
      }
      dq.noalias() = vmap(acts.d_scores, n, n) * k;
      dk.noalias() = vmap(acts.d_scores, n, n).transpose() * q;
    }

    // gather heads back into d_qkv and push through the qkv projection
    for (int t = 0; t < n; ++t) {
      T* row = acts.d_qkv.v.data() + static_cast<size_t>(t) * 3 * d;
      for (int hh = 0; hh < h; ++hh) {
        const T* dqr = acts.dq.v.data() + (static_cast<size_t>(hh) * n + t) * hd;
        const T* dkr = acts.dk.v.data() + (static_cast<size_t>(hh) * n + t) * hd;
        const T* dvr = acts.dv.v.data() + (static_cast<size_t>(hh) * n + t) * hd;
        for (int j = 0; j < hd; ++j) {
          row[hh * hd + j] = dqr[j];
          row[d + hh * hd + j] = dkr[j];
          row[2 * d + hh * hd + j] = dvr[j];
        }
      }
    }
    gmap(B.w_qkv, d, 3 * d).noalias() +=
        vmap(A.ln1_out, n, d).transpose() * vmap(acts.d_qkv, n, 3 * d);
    gmap(B.b_qkv, 1, 3 * d).noalias() += vmap(acts.d_qkv, n, 3 * d).colwise().sum();
    vmap(acts.dx2, n, d).noalias() =
        vmap(acts.d_qkv, n, 3 * d) * vmap(B.w_qkv, d, 3 * d).transpose();
    layernorm_backward(acts.dx2, x_in, A.ln1_mean, A.ln1_rstd, B.ln1_g, B.ln1_b, n, d, acts.dx);
  }

  for (int t = 0; t < n; ++t) {
    const T* dxr = acts.dx.v.data() + static_cast<size_t>(t) * d;
    T* dwte = wte_.g.data() + static_cast<size_t>(acts.ids[t]) * d;
    T* dwpe = wpe_.g.data() + static_cast<size_t>(t) * d;
    for (int j = 0; j < d; ++j) {
      dwte[j] += dxr[j];
      dwpe[j] += dxr[j];
    }
  }
}

template <class T>
double lm_loss(const Tensor<T>& logits, std::span<const int> targets,
               std::span<const uint8_t> mask) {
  int n = logits.shape[0], V = logits.shape[1];
  if (static_cast<int>(targets.size()) != n || static_cast<int>(mask.size()) != n)
    throw std::invalid_argument("lm_loss: shape mismatch");
  double total = 0;
  long count = 0;
  for (int i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    if (targets[i] < 0 || targets[i] >= V) throw std::invalid_argument("lm_loss: bad target id");
    const T* row = logits.v.data() + static_cast<size_t>(i) * V;
    double mx = row[0];
    for (int j = 1; j < V; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double sum = 0;
    for (int j = 0; j < V; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
    total += (mx + std::log(sum)) - static_cast<double>(row[targets[i]]);
    ++count;
  }
  if (count == 0) throw std::invalid_argument("lm_loss: loss mask is all-false");
  return total / count;
}

template <class T>
double lm_loss_and_grad(const Tensor<T>& logits, std::span<const int> targets,
                        std::span<const uint8_t> mask, double scale, Tensor<T>& dlogits) {
  int n = logits.shape[0], V = logits.shape[1];
  if (static_cast<int>(targets.size()) != n || static_cast<int>(mask.size()) != n)
    throw std::invalid_argument("lm_loss: shape mismatch");
  dlogits.shape = {n, V};
  dlogits.v.assign(static_cast<size_t>(n) * V, T(0));
  long count = 0;
  for (int i = 0; i < n; ++i) count += mask[i] ? 1 : 0;
  if (count == 0) throw std::invalid_argument("lm_loss: loss mask is all-false");
  double total = 0;
  double w = scale / count;
  for (int i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    if (targets[i] < 0 || targets[i] >= V) throw std::invalid_argument("lm_loss: bad target id");
    const T* row = logits.v.data() + static_cast<size_t>(i) * V;
    T* drow = dlogits.v.data() + static_cast<size_t>(i) * V;
    double mx = row[0];
    for (int j = 1; j < V; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double sum = 0;
    for (int j = 0; j < V; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
    double lse = mx + std::log(sum);
    total += lse - static_cast<double>(row[targets[i]]);
    for (int j = 0; j < V; ++j) {
      double p = std::exp(static_cast<double>(row[j]) - lse);
      drow[j] = static_cast<T>(p * w);
    }
    drow[targets[i]] -= static_cast<T>(w);
  }
  return total / count;
}

template <class T>
std::vector<double> nll_per_position(const Tensor<T>& logits, std::span<const int> targets) {
  int n = logits.shape[0], V = logits.shape[1];
  if (static_cast<int>(targets.size()) != n)
    throw std::invalid_argument("nll_per_position: shape mismatch");
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) {
    const T* row = logits.v.data() + static_cast<size_t>(i) * V;
    double mx = row[0];
    for (int j = 1; j < V; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double sum = 0;
    for (int j = 0; j < V; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
    out[i] = (mx + std::log(sum)) - static_cast<double>(row[targets[i]]);
  }
  return out;
}

template <class T>
std::vector<double> softmax_logits(std::span<const T> logits, double temperature) {
  if (temperature <= 0) throw std::invalid_argument("temperature must be positive");
  std::vector<double> p(logits.size());
  double mx = -1e300;
  for (size_t i = 0; i < logits.size(); ++i)
    mx = std::max(mx, static_cast<double>(logits[i]) / temperature);
  double sum = 0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(static_cast<double>(logits[i]) / temperature - mx);
    sum += p[i];
  }
  for (auto& x : p) x /= sum;
  return p;
}

template class TransformerLM<float>;
template class TransformerLM<double>;
template double lm_loss<float>(const Tensor<float>&, std::span<const int>,
                               std::span<const uint8_t>);
template double lm_loss<double>(const Tensor<double>&, std::span<const int>,
                                std::span<const uint8_t>);
template double lm_loss_and_grad<float>(const Tensor<float>&, std::span<const int>,
                                        std::span<const uint8_t>, double, Tensor<float>&);
template double lm_loss_and_grad<double>(const Tensor<double>&, std::span<const int>,
                                         std::span<const uint8_t>, double, Tensor<double>&);
template std::vector<double> nll_per_position<float>(const Tensor<float>&, std::span<const int>);
template std::vector<double> nll_per_position<double>(const Tensor<double>&, std::span<const int>);
template std::vector<double> softmax_logits<float>(std::span<const float>, double);
template std::vector<double> softmax_logits<double>(std::span<const double>, double);

}  // namespace tabloid
