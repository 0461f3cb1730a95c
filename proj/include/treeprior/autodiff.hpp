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

// Reverse-mode automatic differentiation over dense tensors.
//
// A Var is a handle to a node holding a value and (lazily) a gradient.
// Operations on Vars that require gradients append an adjoint closure to
// the Tape the inputs belong to; Tape::backward replays the closures in
// strict reverse order. Vars created without a tape are constants, and
// operations that touch only constants record nothing, so inference runs
// through the same code without keeping intermediates alive.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "treeprior/tensor.hpp"

namespace treeprior::ad {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;

  /// Gradient buffer, zero-initialized on first use.
  Tensor<T>& grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
class Tape;

template <typename T>
class Var {
 public:
  Var() = default;
  Var(std::shared_ptr<Node<T>> node, Tape<T>* tape) : node_(std::move(node)), tape_(tape) {}

  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  /// Gradient after Tape::backward; empty if this Var never received one.
  const Tensor<T>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tape<T>* tape() const { return tape_; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }
  bool valid() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node<T>> node_;
  Tape<T>* tape_ = nullptr;
};

/// Constant (no gradient) wrapping a tensor.
template <typename T>
Var<T> constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return Var<T>(std::move(node), nullptr);
}

template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Trainable leaf. Its gradient accumulates over every use.
  Var<T> leaf(Tensor<T> value);

  /// Internal: output node of an op plus its adjoint rule.
  Var<T> record(Tensor<T> value, std::function<void(Node<T>& out)> adjoint, const char* op_name);

  /// Zeroes every gradient on the tape, seeds d(loss) = seed and runs the
  /// adjoints in reverse execution order. Calling it twice gives identical
  /// gradients.
  void backward(const Var<T>& loss, T seed = T(1));

  std::size_t num_records() const { return records_.size(); }
  std::size_t num_leaves() const { return leaves_.size(); }

 private:
  struct Record {
    std::shared_ptr<Node<T>> out;
    std::function<void(Node<T>&)> adjoint;
  };
  std::vector<std::shared_ptr<Node<T>>> leaves_;
  std::vector<Record> records_;
};

// ---- primitives -------------------------------------------------------------

/// a[m,k] * b[k,n]
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

/// Elementwise sum of equal shapes.
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

/// x[n,d] + bias[d], bias broadcast over rows.
template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias);

/// Elementwise product of equal shapes.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& x, T factor);

template <typename T>
Var<T> transpose(const Var<T>& x);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

/// Rows [begin, end) of a rank-2 tensor.
template <typename T>
Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t end);

/// Tanh-approximation GELU.
template <typename T>
Var<T> gelu(const Var<T>& x);

template <typename T>
Var<T> tanh(const Var<T>& x);

template <typename T>
Var<T> relu(const Var<T>& x);

/// Normalizes each row of x[n,d] and applies gain[d], shift[d].
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& shift, T eps = T(1e-5));

/// Row-wise softmax of x[n,c].
template <typename T>
Var<T> softmax_rows(const Var<T>& x);

/// Scalar sum of all elements, shape {1}.
template <typename T>
Var<T> sum(const Var<T>& x);

/// Mean over rows of -log softmax(logits)[label]; shape {1}.
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels);

/// Multi-head self-attention under the in-context mask: the first
/// `n_support` rows attend to all support rows, every later (query) row
/// attends to all support rows and to itself only. q, k, v are [n, d];
/// heads split the columns evenly. With `query_rows_only` the output holds
/// just the query rows, [n - n_support, d].
template <typename T>
Var<T> icl_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t n_heads,
                     std::size_t n_support, bool query_rows_only = false);

/// Throws NonFiniteError when any value is NaN or infinite.
template <typename T>
void check_finite(const Tensor<T>& t, const char* what);

}  // namespace treeprior::ad
