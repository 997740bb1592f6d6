// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace tabloid {

/// Dense row-major tensor with an optional gradient buffer of the same
/// shape. Parameters allocate the gradient; activations do not.
template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> v;
  std::vector<T> g;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    v.assign(numel(), T(0));
  }

  int64_t numel() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }

  int rows() const { return shape.size() == 2 ? shape[0] : 1; }
  int cols() const { return shape.empty() ? 0 : shape.back(); }
  bool is_matrix() const { return shape.size() == 2; }

  void alloc_grad() { g.assign(v.size(), T(0)); }
  void zero_grad() { std::fill(g.begin(), g.end(), T(0)); }
  bool has_grad() const { return g.size() == v.size() && !v.empty(); }
};

/// Named view over a model parameter, the unit optimizers, checkpoints and
/// gradient checks iterate over.
template <class T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor;
};

}  // namespace tabloid
