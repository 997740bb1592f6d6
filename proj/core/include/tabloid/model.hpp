// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tabloid/tensor.hpp"

namespace tabloid {

struct ModelConfig {
  int layers = 4;
  int d_model = 128;
  int n_heads = 4;
  int vocab_size = 512;
  int max_seq = 256;
  std::string preset = "toy-base";

  /// Presets: toy-base (L4 d128 h4), toy-large (L6 d192 h6),
  /// toy-mega (L8 d256 h8); all with max_seq 256.
  static ModelConfig from_preset(const std::string& name, int vocab_size);

  int head_dim() const { return d_model / n_heads; }
  void check() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Forward-pass workspace: activations cached for backward plus scratch.
/// One instance per concurrent forward/backward stream.
template <class T>
struct Acts;

template <class T>
class Decoder;

/// Decoder-only causal transformer with a next-token head and a 2-class
/// detection head over the final hidden state at the CLS position.
/// Pre-norm blocks, exact-erf GELU feed-forward of width 4*d_model,
/// learned positional embeddings.
template <class T>
class TransformerLM {
 public:
  explicit TransformerLM(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  /// Gaussian(0, 0.02) init, residual projections scaled by 1/sqrt(2L),
  /// zero detection head.
  void init(uint64_t seed);

  /// Parameters in a fixed, documented order.
  std::vector<ParamRef<T>> params();

  void zero_grad();
  int64_t num_params() const;

  /// Runs the trunk and next-token head. Row i of the returned logits
  /// (n x V) scores the token at position i+1. Throws if the sequence is
  /// empty, too long, or contains out-of-range ids.
  const Tensor<T>& forward(std::span<const int> ids, Acts<T>& acts) const;

  /// Final hidden states (n x d, after the last layer norm) from the most
  /// recent forward into `acts`.
  const Tensor<T>& hidden(const Acts<T>& acts) const;

  /// 2-class detection logits from the hidden state at the CLS position.
  /// The sequence in `acts` must end with the CLS token.
  std::array<T, 2> detect_logits(const Acts<T>& acts) const;

  /// Accumulates parameter gradients. `dlogits` is the upstream gradient
  /// of the LM logits (may be zero when only the detection path is
  /// active); `dcls`, when non-null, is the upstream gradient of the
  /// detection logits.
  void backward(Acts<T>& acts, const Tensor<T>& dlogits, const std::array<T, 2>* dcls = nullptr);

  // Direct tensor access for checkpointing and tests.
  Tensor<T>& tensor(const std::string& name);

 private:
  friend class Decoder<T>;
  ModelConfig cfg_;
  struct Block {
    Tensor<T> ln1_g, ln1_b, w_qkv, b_qkv, w_ao, b_ao;
    Tensor<T> ln2_g, ln2_b, w_fc, b_fc, w_fp, b_fp;
  };
  Tensor<T> wte_, wpe_;
  std::vector<Block> blocks_;
  Tensor<T> lnf_g_, lnf_b_;
  Tensor<T> w_lm_, b_lm_;
  Tensor<T> w_det_, b_det_;
};

/// Mean negative log-likelihood of `targets` under `logits` rows where
/// the mask is true. Throws if the mask is all-false.
template <class T>
double lm_loss(const Tensor<T>& logits, std::span<const int> targets,
               std::span<const uint8_t> mask);

/// lm_loss plus its gradient: dlogits = scale * (softmax - onehot) / n_masked
/// on masked rows, zero elsewhere.
template <class T>
double lm_loss_and_grad(const Tensor<T>& logits, std::span<const int> targets,
                        std::span<const uint8_t> mask, double scale, Tensor<T>& dlogits);

/// Per-row NLL of targets[i] under logits row i, in nats.
template <class T>
std::vector<double> nll_per_position(const Tensor<T>& logits, std::span<const int> targets);

/// Numerically stable softmax of one logits row, computed in double
/// (shared by the sampler and the analysis passes so nucleus membership
/// is decided identically everywhere).
template <class T>
std::vector<double> softmax_logits(std::span<const T> logits, double temperature);

template <class T>
struct Acts {
  // Sized by TransformerLM::forward; treat as opaque outside model code.
  int n = 0;
  std::vector<int> ids;
  Tensor<T> x0;
  struct LayerActs {
    Tensor<T> ln1_out, ln1_mean, ln1_rstd;
    Tensor<T> q, k, v;          // [h*n, hd] head-major
    Tensor<T> att;              // [h*n, n] softmax rows
    Tensor<T> ctx;              // [n, d] heads re-concatenated
    Tensor<T> x_mid;            // after attention residual
    Tensor<T> ln2_out, ln2_mean, ln2_rstd;
    Tensor<T> mlp_pre, mlp_act; // [n, 4d]
    Tensor<T> x_out;            // block output
  };
  std::vector<LayerActs> layers;
  Tensor<T> lnf_out, lnf_mean, lnf_rstd;
  Tensor<T> logits;
  // backward scratch
  Tensor<T> dx, dx2, d_qkv, d_ctx, d_mlp, d_scores, d_head, dq, dk, dv;
};

}  // namespace tabloid
