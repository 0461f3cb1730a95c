/*
 * Copyright 2026 The TabForest Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "treeprior/tensor.hpp"

namespace treeprior {

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double max_grad_norm = 1.0;
};

/// Moments for AdamW; one entry per parameter tensor.
template <typename T>
struct OptimizerState {
  AdamWHyper hyper;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::int64_t step = 0;

  OptimizerState() = default;
  OptimizerState(std::span<const Tensor<T>> params, AdamWHyper h) : hyper(h) {
    for (const auto& p : params) {
      m.emplace_back(p.shape());
      v.emplace_back(p.shape());
    }
  }
};

/// Global L2 norm over all tensors, accumulated in double.
template <typename T>
double global_norm(std::span<const Tensor<T>> grads) {
  double total = 0;
  for (const auto& g : grads)
    for (T x : g.values()) total += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(total);
}

/// Scales all gradients by max_norm / N when their global norm N exceeds
/// max_norm. Returns N before clipping.
template <typename T>
double clip_global_norm(std::span<Tensor<T>> grads, double max_norm) {
  if (!(max_norm > 0)) throw std::invalid_argument("clip_global_norm: max_norm must be positive");
  const double norm = global_norm(std::span<const Tensor<T>>(grads.data(), grads.size()));
  if (norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto& g : grads)
      for (T& x : g.storage()) x *= factor;
  }
  return norm;
}

/// One decoupled-weight-decay Adam update with bias correction.
template <typename T>
void adamw_step(std::span<Tensor<T>> params, std::span<const Tensor<T>> grads, OptimizerState<T>& state,
                double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeError("adamw_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape() || params[i].shape() != state.m[i].shape()) {
      throw ShapeError("adamw_step: shape mismatch at parameter " + std::to_string(i));
    }
    if (!grads[i].all_finite()) throw NonFiniteError("adamw_step: non-finite gradient");
  }
  const auto& h = state.hyper;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params[i].data();
    const T* g = grads[i].data();
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    for (std::size_t j = 0; j < params[i].size(); ++j) {
      m[j] = static_cast<T>(h.beta1 * m[j] + (1.0 - h.beta1) * g[j]);
      v[j] = static_cast<T>(h.beta2 * v[j] + (1.0 - h.beta2) * static_cast<double>(g[j]) * g[j]);
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      double updated = static_cast<double>(p[j]) * (1.0 - lr * h.weight_decay);
      updated -= lr * mhat / (std::sqrt(vhat) + h.eps);
      p[j] = static_cast<T>(updated);
    }
  }
}

/// Cosine decay from `base` at step 0 to 0 at `total`; no warmup.
inline double cosine_lr(std::int64_t step, std::int64_t total, double base) {
  if (total <= 0 || step < 0 || step > total) throw std::invalid_argument("cosine_lr: need 0 <= step <= total, total > 0");
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

}  // namespace treeprior
