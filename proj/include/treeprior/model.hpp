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

// In-context-learning transformer for tabular classification.
//
// Each observation is one token: its 100 features embedded linearly, plus
// (for support rows) the class index, as a real number, times a learned
// vector. Tokens pass through pre-norm transformer blocks whose attention
// lets support rows see only support rows and each query row see the
// support rows and itself. A 10-way head reads the query tokens.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "treeprior/autodiff.hpp"
#include "treeprior/preprocess.hpp"
#include "treeprior/rng.hpp"
#include "treeprior/tensor.hpp"

namespace treeprior {

enum class Activation : std::uint8_t { kGelu = 0, kRelu = 1 };

std::string_view activation_name(Activation a);
Activation parse_activation(std::string_view name);

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t d_token = 64;
  std::size_t ffn_multiplier = 2;
  std::size_t d_features = kModelFeatures;
  std::size_t n_outputs = static_cast<std::size_t>(kMaxClasses);
  Activation activation = Activation::kGelu;

  /// 12 layers, 4 heads, width 512.
  static ModelConfig reference();
  /// 2 layers, 2 heads, width 64.
  static ModelConfig desk();

  void validate() const;
  std::size_t d_ffn() const { return ffn_multiplier * d_token; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Position of each tensor in the fixed parameter order.
struct ParamLayout {
  static constexpr std::size_t kFeatureWeight = 0;  // [d_features, d_token]
  static constexpr std::size_t kFeatureBias = 1;    // [d_token]
  static constexpr std::size_t kTargetWeight = 2;   // [1, d_token]
  static constexpr std::size_t kTargetBias = 3;     // [1, d_token]
  static constexpr std::size_t kFirstLayer = 4;

  enum LayerSlot : std::size_t {
    kNorm1Gain, kNorm1Shift, kQueryWeight, kQueryBias, kKeyWeight, kKeyBias, kValueWeight, kValueBias,
    kOutWeight, kOutBias, kNorm2Gain, kNorm2Shift, kFfnInWeight, kFfnInBias, kFfnOutWeight, kFfnOutBias,
    kLayerSlots
  };

  static std::size_t layer(std::size_t l, LayerSlot slot) { return kFirstLayer + l * kLayerSlots + slot; }
  static std::size_t final_norm_gain(std::size_t n_layers) { return kFirstLayer + n_layers * kLayerSlots; }
  static std::size_t final_norm_shift(std::size_t n_layers) { return final_norm_gain(n_layers) + 1; }
  static std::size_t head_weight(std::size_t n_layers) { return final_norm_gain(n_layers) + 2; }
  static std::size_t head_bias(std::size_t n_layers) { return final_norm_gain(n_layers) + 3; }
  static std::size_t count(std::size_t n_layers) { return final_norm_gain(n_layers) + 4; }
};

/// Names and shapes of all parameters in the fixed order.
std::vector<std::pair<std::string, Shape>> parameter_specs(const ModelConfig& config);

template <typename T>
struct ModelParams {
  ModelConfig config;
  std::vector<Tensor<T>> tensors;

  std::size_t num_scalars() const;
  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.config = config;
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
    return out;
  }
  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Projections ~ N(0, 0.02^2), biases 0, layer-norm gains 1.
template <typename T>
ModelParams<T> init_params(const ModelConfig& config, Rng& rng);

/// Allowed-attention matrix for n_support + n_query tokens; entry
/// (i, j) says whether token i may attend to token j.
class AttentionMask {
 public:
  AttentionMask(std::size_t n_support, std::size_t n_query);
  std::size_t size() const { return n_; }
  bool allowed(std::size_t i, std::size_t j) const { return cells_[i * n_ + j]; }

 private:
  std::size_t n_;
  std::vector<bool> cells_;
};

AttentionMask attention_mask(std::size_t n_support, std::size_t n_query);

/// Token embeddings [n_support + n_query, d_token], support first.
template <typename T>
ad::Var<T> embed(std::span<const ad::Var<T>> params, const ModelConfig& config, const Episode& ep);

/// Query logits [n_query, n_outputs] with params given as Vars (tape
/// leaves for training, constants for inference).
template <typename T>
ad::Var<T> forward_logits(std::span<const ad::Var<T>> params, const ModelConfig& config, const Episode& ep);

/// Inference without gradients.
template <typename T>
Tensor<T> forward(const ModelParams<T>& params, const Episode& ep);

/// Softmax over the first n_classes logits of each row.
template <typename T>
Tensor<T> predict_proba(const Tensor<T>& logits, int n_classes);

/// Wraps every parameter tensor as a constant Var.
template <typename T>
std::vector<ad::Var<T>> constant_params(const ModelParams<T>& params);

/// Registers every parameter tensor as a leaf of `tape`.
template <typename T>
std::vector<ad::Var<T>> leaf_params(const ModelParams<T>& params, ad::Tape<T>& tape);

}  // namespace treeprior
