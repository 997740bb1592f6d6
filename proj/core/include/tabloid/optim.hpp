// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tabloid/tensor.hpp"

namespace tabloid {

struct OptimizerConfig {
  enum class Kind { Adafactor, Adam };
  Kind kind = Kind::Adafactor;
  double peak_lr = 1e-3;
  int warmup_steps = 0;
  int total_steps = 1;
  double beta1 = 0.999;      // first-moment decay (Adam default: 0.9)
  double weight_decay = 0.01;
  double clip_rms = 1.0;     // per-tensor update RMS clip (Adafactor)
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  static OptimizerConfig adafactor(double peak_lr, int total_steps, int warmup_steps);
  static OptimizerConfig adam(double peak_lr, int total_steps, int warmup_steps);

  void check() const;

  /// Learning rate at 0-based step: linear warmup from 0 to peak over
  /// warmup_steps, then linear decay to 0 at total_steps (Adafactor) or
  /// constant (Adam).
  double lr_at(int step) const;
};

/// Scales `u` so its root-mean-square is at most `clip`; returns the
/// applied factor (1 when no clipping was needed).
double clip_update_rms(std::span<double> u, double clip);

/// Adafactor with factored second moments: an m x n matrix parameter
/// stores one length-m and one length-n accumulator instead of m*n
/// scalars; 1-D parameters keep a full accumulator. First moment uses
/// beta1 with bias correction; updates are RMS-clipped per tensor and
/// weight decay is decoupled.
template <class T>
class Adafactor {
 public:
  explicit Adafactor(const OptimizerConfig& cfg);

  /// Applies one update from the gradients in `params`. `step` is 0-based
  /// and must advance by one per call.
  void step(std::vector<ParamRef<T>>& params, int step);

  struct State {
    std::vector<double> m;        // first moment, full shape
    std::vector<double> vr, vc;   // factored second moment (matrices)
    std::vector<double> v;        // full second moment (vectors)
  };
  const State& state(size_t param_index) const { return states_.at(param_index); }

 private:
  OptimizerConfig cfg_;
  std::vector<State> states_;
};

/// Standard bias-corrected Adam with decoupled weight decay.
template <class T>
class Adam {
 public:
  explicit Adam(const OptimizerConfig& cfg);
  void step(std::vector<ParamRef<T>>& params, int step);

  struct State {
    std::vector<double> m, v;
  };
  const State& state(size_t param_index) const { return states_.at(param_index); }

 private:
  OptimizerConfig cfg_;
  std::vector<State> states_;
};

}  // namespace tabloid
