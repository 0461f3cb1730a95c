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

#include "treeprior/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace treeprior {

using ad::Var;

std::string_view activation_name(Activation a) { return a == Activation::kGelu ? "gelu" : "relu"; }

Activation parse_activation(std::string_view name) {
  if (name == "gelu") return Activation::kGelu;
  if (name == "relu") return Activation::kRelu;
  throw std::invalid_argument("unknown activation: " + std::string(name));
}

ModelConfig ModelConfig::reference() {
  ModelConfig c;
  c.n_layers = 12;
  c.n_heads = 4;
  c.d_token = 512;
  return c;
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

void ModelConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || d_token == 0 || ffn_multiplier == 0 || d_features == 0 || n_outputs == 0) {
    throw std::invalid_argument("ModelConfig: all sizes must be positive");
  }
  if (d_token % n_heads != 0) throw std::invalid_argument("ModelConfig: d_token must be divisible by n_heads");
}

std::vector<std::pair<std::string, Shape>> parameter_specs(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.d_token, f = c.d_ffn();
  std::vector<std::pair<std::string, Shape>> specs = {
      {"embed.feature.weight", {c.d_features, d}},
      {"embed.feature.bias", {d}},
      {"embed.target.weight", {1, d}},
      {"embed.target.bias", {1, d}},
  };
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    for (auto& [name, shape] : std::vector<std::pair<std::string, Shape>>{
             {"norm1.gain", {d}}, {"norm1.shift", {d}}, {"attn.query.weight", {d, d}}, {"attn.query.bias", {d}},
             {"attn.key.weight", {d, d}}, {"attn.key.bias", {d}}, {"attn.value.weight", {d, d}}, {"attn.value.bias", {d}},
             {"attn.out.weight", {d, d}}, {"attn.out.bias", {d}}, {"norm2.gain", {d}}, {"norm2.shift", {d}},
             {"ffn.in.weight", {d, f}}, {"ffn.in.bias", {f}}, {"ffn.out.weight", {f, d}}, {"ffn.out.bias", {d}}}) {
      specs.emplace_back(p + name, shape);
    }
  }
  specs.push_back({"final_norm.gain", {d}});
  specs.push_back({"final_norm.shift", {d}});
  specs.push_back({"head.weight", {d, c.n_outputs}});
  specs.push_back({"head.bias", {c.n_outputs}});
  return specs;
}

template <typename T>
std::size_t ModelParams<T>::num_scalars() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& config, Rng& rng) {
  constexpr double kInitStd = 0.02;
  ModelParams<T> p;
  p.config = config;
  for (const auto& [name, shape] : parameter_specs(config)) {
    Tensor<T> t(shape);
    const bool is_gain = name.ends_with(".gain");
    const bool is_bias = name.ends_with(".bias") || name.ends_with(".shift");
    if (is_gain) {
      t.fill(T(1));
    } else if (!is_bias) {
      for (auto& v : t.storage()) v = static_cast<T>(kInitStd * rng.normal());
    }
    p.tensors.push_back(std::move(t));
  }
  return p;
}

AttentionMask::AttentionMask(std::size_t n_support, std::size_t n_query) : n_(n_support + n_query), cells_(n_ * n_, false) {
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = 0; j < n_support; ++j) cells_[i * n_ + j] = true;
    if (i >= n_support) cells_[i * n_ + i] = true;
  }
}

AttentionMask attention_mask(std::size_t n_support, std::size_t n_query) {
  if (n_support == 0) throw std::invalid_argument("attention_mask: need at least one support token");
  return AttentionMask(n_support, n_query);
}

namespace {

template <typename T>
Tensor<T> to_tensor(const Matrix& m) {
  return Tensor<T>({m.rows(), m.cols()}, std::vector<T>(m.data().begin(), m.data().end()));
}

template <typename T>
Var<T> activate(const Var<T>& x, Activation a) {
  return a == Activation::kGelu ? ad::gelu(x) : ad::relu(x);
}

}  // namespace

template <typename T>
Var<T> embed(std::span<const Var<T>> p, const ModelConfig& config, const Episode& ep) {
  const std::size_t s = ep.n_support(), q = ep.n_query(), n = s + q;
  if (ep.X_support.cols() != config.d_features || ep.X_query.cols() != config.d_features) {
    throw ShapeError("embed: episode width does not match the model");
  }
  Tensor<T> x({n, config.d_features});
  std::copy(ep.X_support.data().begin(), ep.X_support.data().end(), x.data());
  std::copy(ep.X_query.data().begin(), ep.X_query.data().end(), x.data() + s * config.d_features);
  // Support rows carry their label as a real number and a unit indicator
  // that switches on the target bias; query rows carry zeros.
  Tensor<T> label_col({n, 1}), support_col({n, 1});
  for (std::size_t i = 0; i < s; ++i) {
    label_col[i] = static_cast<T>(ep.y_support[i]);
    support_col[i] = T(1);
  }
  Var<T> tokens = ad::add_bias(ad::matmul(ad::constant(std::move(x)), p[ParamLayout::kFeatureWeight]),
                               p[ParamLayout::kFeatureBias]);
  tokens = ad::add(tokens, ad::matmul(ad::constant(std::move(label_col)), p[ParamLayout::kTargetWeight]));
  return ad::add(tokens, ad::matmul(ad::constant(std::move(support_col)), p[ParamLayout::kTargetBias]));
}

template <typename T>
Var<T> forward_logits(std::span<const Var<T>> p, const ModelConfig& config, const Episode& ep) {
  config.validate();
  if (p.size() != ParamLayout::count(config.n_layers)) throw ShapeError("forward: parameter count does not match config");
  const std::size_t s = ep.n_support(), n = s + ep.n_query();
  if (s == 0) throw std::invalid_argument("forward: episode needs at least one support row");
  if (ep.n_query() == 0) throw std::invalid_argument("forward: episode has no query rows");

  Var<T> h = embed<T>(p, config, ep);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    using L = ParamLayout;
    auto w = [&](L::LayerSlot slot) -> const Var<T>& { return p[L::layer(l, slot)]; };
    const bool last = l + 1 == config.n_layers;

    Var<T> a = ad::layer_norm(h, w(L::kNorm1Gain), w(L::kNorm1Shift));
    Var<T> qv = ad::add_bias(ad::matmul(a, w(L::kQueryWeight)), w(L::kQueryBias));
    Var<T> kv = ad::add_bias(ad::matmul(a, w(L::kKeyWeight)), w(L::kKeyBias));
    Var<T> vv = ad::add_bias(ad::matmul(a, w(L::kValueWeight)), w(L::kValueBias));
    // Only query tokens feed the head, so the last block drops support rows.
    Var<T> att = ad::icl_attention(qv, kv, vv, config.n_heads, s, last);
    Var<T> residual = last ? ad::slice_rows(h, s, n) : h;
    h = ad::add(residual, ad::add_bias(ad::matmul(att, w(L::kOutWeight)), w(L::kOutBias)));

    Var<T> f = ad::layer_norm(h, w(L::kNorm2Gain), w(L::kNorm2Shift));
    f = activate(ad::add_bias(ad::matmul(f, w(L::kFfnInWeight)), w(L::kFfnInBias)), config.activation);
    h = ad::add(h, ad::add_bias(ad::matmul(f, w(L::kFfnOutWeight)), w(L::kFfnOutBias)));
  }
  const std::size_t nl = config.n_layers;
  h = ad::layer_norm(h, p[ParamLayout::final_norm_gain(nl)], p[ParamLayout::final_norm_shift(nl)]);
  return ad::add_bias(ad::matmul(h, p[ParamLayout::head_weight(nl)]), p[ParamLayout::head_bias(nl)]);
}

template <typename T>
std::vector<Var<T>> constant_params(const ModelParams<T>& params) {
  std::vector<Var<T>> out;
  out.reserve(params.tensors.size());
  for (const auto& t : params.tensors) out.push_back(ad::constant(t));
  return out;
}

template <typename T>
std::vector<Var<T>> leaf_params(const ModelParams<T>& params, ad::Tape<T>& tape) {
  std::vector<Var<T>> out;
  out.reserve(params.tensors.size());
  for (const auto& t : params.tensors) out.push_back(tape.leaf(t));
  return out;
}

template <typename T>
Tensor<T> forward(const ModelParams<T>& params, const Episode& ep) {
  const auto vars = constant_params(params);
  return forward_logits<T>(vars, params.config, ep).value();
}

template <typename T>
Tensor<T> predict_proba(const Tensor<T>& logits, int n_classes) {
  if (n_classes < 1 || static_cast<std::size_t>(n_classes) > logits.cols()) {
    throw std::invalid_argument("predict_proba: n_classes outside [1, " + std::to_string(logits.cols()) + "]");
  }
  const std::size_t rows = logits.rows(), c = static_cast<std::size_t>(n_classes);
  Tensor<T> out({rows, c});
  for (std::size_t i = 0; i < rows; ++i) {
    const T* row = logits.data() + i * logits.cols();
    const T mx = *std::max_element(row, row + c);
    T total = 0;
    for (std::size_t j = 0; j < c; ++j) total += (out(i, j) = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) out(i, j) /= total;
  }
  return out;
}

#define TREEPRIOR_INSTANTIATE(T)                                                                         \
  template struct ModelParams<T>;                                                                        \
  template ModelParams<T> init_params<T>(const ModelConfig&, Rng&);                                      \
  template Var<T> embed<T>(std::span<const Var<T>>, const ModelConfig&, const Episode&);                 \
  template Var<T> forward_logits<T>(std::span<const Var<T>>, const ModelConfig&, const Episode&);        \
  template Tensor<T> forward<T>(const ModelParams<T>&, const Episode&);                                  \
  template Tensor<T> predict_proba<T>(const Tensor<T>&, int);                                            \
  template std::vector<Var<T>> constant_params<T>(const ModelParams<T>&);                                \
  template std::vector<Var<T>> leaf_params<T>(const ModelParams<T>&, ad::Tape<T>&);

TREEPRIOR_INSTANTIATE(float)
TREEPRIOR_INSTANTIATE(double)

#undef TREEPRIOR_INSTANTIATE

}  // namespace treeprior
