// SPDX-License-Identifier: Apache-2.0
#include "tabloid/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace tabloid {

namespace {
constexpr double kEps1 = 1e-30;  // added to squared gradients before accumulation
}

OptimizerConfig OptimizerConfig::adafactor(double peak_lr, int total_steps, int warmup_steps) {
  OptimizerConfig c;
  c.kind = Kind::Adafactor;
  c.peak_lr = peak_lr;
  c.total_steps = total_steps;
  c.warmup_steps = warmup_steps;
  c.beta1 = 0.999;
  c.weight_decay = 0.01;
  c.clip_rms = 1.0;
  c.check();
  return c;
}

OptimizerConfig OptimizerConfig::adam(double peak_lr, int total_steps, int warmup_steps) {
  OptimizerConfig c;
  c.kind = Kind::Adam;
  c.peak_lr = peak_lr;
  c.total_steps = total_steps;
  c.warmup_steps = warmup_steps;
  c.beta1 = 0.9;
  c.weight_decay = 0.0;
  c.check();
  return c;
}

void OptimizerConfig::check() const {
  if (warmup_steps > total_steps)
    throw std::invalid_argument("warmup_steps must not exceed total_steps");
  if (warmup_steps < 0 || total_steps < 1) throw std::invalid_argument("bad step counts");
  if (clip_rms <= 0) throw std::invalid_argument("clip_rms must be positive");
  if (peak_lr < 0 || beta1 < 0 || beta1 >= 1) throw std::invalid_argument("bad optimizer config");
}

double OptimizerConfig::lr_at(int step) const {
  if (warmup_steps > 0 && step < warmup_steps)
    return peak_lr * static_cast<double>(step) / warmup_steps;
  if (kind == Kind::Adam) return peak_lr;
  if (total_steps <= warmup_steps) return peak_lr;
  double frac = static_cast<double>(step - warmup_steps) / (total_steps - warmup_steps);
  return peak_lr * std::max(0.0, 1.0 - frac);
}

double clip_update_rms(std::span<double> u, double clip) {
  double sq = 0;
  for (double x : u) sq += x * x;
  double rms = std::sqrt(sq / static_cast<double>(u.size()));
  if (rms <= clip) return 1.0;
  double factor = clip / rms;
  for (double& x : u) x *= factor;
  return factor;
}

template <class T>
Adafactor<T>::Adafactor(const OptimizerConfig& cfg) : cfg_(cfg) {
  cfg_.check();
  if (cfg_.kind != OptimizerConfig::Kind::Adafactor)
    throw std::invalid_argument("config kind is not Adafactor");
}

template <class T>
void Adafactor<T>::step(std::vector<ParamRef<T>>& params, int step) {
  if (states_.empty()) {
    states_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      const Tensor<T>& t = *params[i].tensor;
      states_[i].m.assign(t.numel(), 0.0);
      if (t.is_matrix()) {
        states_[i].vr.assign(t.rows(), 0.0);
        states_[i].vc.assign(t.cols(), 0.0);
      } else {
        states_[i].v.assign(t.numel(), 0.0);
      }
    }
  }
  if (states_.size() != params.size())
    throw std::invalid_argument("parameter list changed between steps");

  double t1 = step + 1;  // 1-based step for decay schedules
  double beta2t = 1.0 - std::pow(t1, -0.8);
  double lr = cfg_.lr_at(step);
  double bias1 = 1.0 - std::pow(cfg_.beta1, t1);

  std::vector<double> u;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<T>& t = *params[pi].tensor;
    State& s = states_[pi];
    size_t n = t.v.size();
    u.resize(n);

    if (t.is_matrix()) {
      int rows = t.rows(), cols = t.cols();
      // factored second moment: row and column sums of G^2 + eps1
      double total = 0;
      for (int r = 0; r < rows; ++r) {
        double rsum = 0;
        const T* grow = t.g.data() + static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) {
          double g2 = static_cast<double>(grow[c]) * grow[c] + kEps1;
          rsum += g2;
        }
        s.vr[r] = beta2t * s.vr[r] + (1.0 - beta2t) * rsum;
        total += s.vr[r];
      }
      for (int c = 0; c < cols; ++c) {
        double csum = 0;
        for (int r = 0; r < rows; ++r) {
          const T g = t.g[static_cast<size_t>(r) * cols + c];
          csum += static_cast<double>(g) * g + kEps1;
        }
        s.vc[c] = beta2t * s.vc[c] + (1.0 - beta2t) * csum;
      }
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
          double vhat = s.vr[r] * s.vc[c] / total;
          u[static_cast<size_t>(r) * cols + c] =
              static_cast<double>(t.g[static_cast<size_t>(r) * cols + c]) / std::sqrt(vhat);
        }
      }
    } else {
      for (size_t i = 0; i < n; ++i) {
        double g2 = static_cast<double>(t.g[i]) * t.g[i] + kEps1;
        s.v[i] = beta2t * s.v[i] + (1.0 - beta2t) * g2;
        u[i] = static_cast<double>(t.g[i]) / std::sqrt(s.v[i]);
      }
    }

    clip_update_rms(u, cfg_.clip_rms);
    for (size_t i = 0; i < n; ++i) {
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * u[i];
      double mhat = s.m[i] / bias1;
      double w = static_cast<double>(t.v[i]);
      t.v[i] = static_cast<T>(w - lr * (mhat + cfg_.weight_decay * w));
    }
  }
}

template <class T>
Adam<T>::Adam(const OptimizerConfig& cfg) : cfg_(cfg) {
  cfg_.check();
  if (cfg_.kind != OptimizerConfig::Kind::Adam)
    throw std::invalid_argument("config kind is not Adam");
}

template <class T>
void Adam<T>::step(std::vector<ParamRef<T>>& params, int step) {
  if (states_.empty()) {
    states_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      states_[i].m.assign(params[i].tensor->numel(), 0.0);
      states_[i].v.assign(params[i].tensor->numel(), 0.0);
    }
  }
  if (states_.size() != params.size())
    throw std::invalid_argument("parameter list changed between steps");

  double t1 = step + 1;
  double lr = cfg_.lr_at(step);
  double bias1 = 1.0 - std::pow(cfg_.beta1, t1);
  double bias2 = 1.0 - std::pow(cfg_.adam_beta2, t1);

  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<T>& t = *params[pi].tensor;
    State& s = states_[pi];
    for (size_t i = 0; i < t.v.size(); ++i) {
      double g = t.g[i];
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
      s.v[i] = cfg_.adam_beta2 * s.v[i] + (1.0 - cfg_.adam_beta2) * g * g;
      double mhat = s.m[i] / bias1;
      double vhat = s.v[i] / bias2;
      double w = static_cast<double>(t.v[i]);
      t.v[i] = static_cast<T>(w - lr * (mhat / (std::sqrt(vhat) + cfg_.adam_eps) +
                                        cfg_.weight_decay * w));
    }
  }
}

template class Adafactor<float>;
template class Adafactor<double>;
template class Adam<float>;
template class Adam<double>;

}  // namespace tabloid
