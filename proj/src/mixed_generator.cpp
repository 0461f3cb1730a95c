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

#include "treeprior/mixed_generator.hpp"

#include <cmath>
#include <stdexcept>

namespace treeprior {

void NeuralGenConfig::validate() const {
  if (n_features < 1 || dataset_size < 2 || hidden_layers < 1 || hidden_width < 1) {
    throw std::invalid_argument("neural config: sizes must be positive");
  }
  if (n_classes < 2 || n_classes > 10) throw std::invalid_argument("neural config: n_classes outside [2, 10]");
  if (noise_scale < 0.0) throw std::invalid_argument("neural config: negative noise_scale");
}

void NeuralGenBounds::validate() const {
  for (auto [r, lo] : {std::pair{dataset_size, 2}, {n_features, 1}, {n_classes, 2}, {hidden_layers, 1}, {hidden_width, 1}}) {
    if (r.lo > r.hi || r.lo < lo) throw std::invalid_argument("neural bounds: invalid integer range");
  }
  if (n_classes.hi > 10) throw std::invalid_argument("neural bounds: n_classes above the 10-way head");
  if (noise_scale.lo < 0.0 || noise_scale.lo > noise_scale.hi) throw std::invalid_argument("neural bounds: invalid noise range");
}

NeuralGenConfig sample_neural_config(const NeuralGenBounds& bounds, Rng& rng, std::uint64_t seed, std::uint64_t stream) {
  bounds.validate();
  NeuralGenConfig c;
  c.dataset_size = static_cast<int>(rng.uniform_int(bounds.dataset_size.lo, bounds.dataset_size.hi));
  c.n_features = static_cast<int>(rng.uniform_int(bounds.n_features.lo, bounds.n_features.hi));
  c.n_classes = static_cast<int>(rng.uniform_int(bounds.n_classes.lo, bounds.n_classes.hi));
  c.hidden_layers = static_cast<int>(rng.uniform_int(bounds.hidden_layers.lo, bounds.hidden_layers.hi));
  c.hidden_width = static_cast<int>(rng.uniform_int(bounds.hidden_width.lo, bounds.hidden_width.hi));
  c.noise_scale = rng.uniform(bounds.noise_scale.lo, bounds.noise_scale.hi);
  c.seed = seed;
  c.stream = stream;
  return c;
}

RawDataset generate_neural_dataset(const NeuralGenConfig& config, const Rng& rng, const GenerationLimits& limits) {
  config.validate();
  const auto n = static_cast<std::size_t>(config.dataset_size);
  const auto d = static_cast<std::size_t>(config.n_features);
  const auto w = static_cast<std::size_t>(config.hidden_width);
  for (int attempt = 0; attempt < limits.max_attempts; ++attempt) {
    Rng r = rng.derive(static_cast<std::uint64_t>(attempt));
    Matrix X(n, d);
    for (auto& v : X.data()) v = r.normal();

    // Layer weights ~ N(0, 1/fan_in), biases ~ N(0, 1).
    std::vector<double> h(X.data());
    std::size_t width_in = d;
    auto dense = [&](std::size_t width_out, bool activate) {
      std::vector<double> weights(width_in * width_out), bias(width_out);
      const double sd = 1.0 / std::sqrt(static_cast<double>(width_in));
      for (auto& v : weights) v = sd * r.normal();
      for (auto& v : bias) v = r.normal();
      std::vector<double> out(n * width_out);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t o = 0; o < width_out; ++o) {
          double s = bias[o];
          for (std::size_t k = 0; k < width_in; ++k) s += h[i * width_in + k] * weights[k * width_out + o];
          out[i * width_out + o] = activate ? std::tanh(s) : s;
        }
      }
      h = std::move(out);
      width_in = width_out;
    };
    for (int layer = 0; layer < config.hidden_layers; ++layer) dense(w, true);
    dense(1, false);
    for (auto& v : h) v += config.noise_scale * r.normal();

    const std::vector<double> u = quantile_to_uniform(h);
    std::vector<int> labels;
    try {
      labels = discretize_targets(u, config.n_classes, r);
    } catch (const DegenerateDatasetError&) {
      continue;
    }
    if (!class_balance_ok(labels, config.n_classes, limits)) continue;

    RawDataset ds;
    ds.X = std::move(X);
    ds.y = std::move(labels);
    ds.n_classes = config.n_classes;
    ds.categorical_mask.assign(d, false);
    return ds;
  }
  throw DegenerateDatasetError("generate_neural_dataset: no usable dataset after " +
                               std::to_string(limits.max_attempts) + " attempts");
}

void MixPolicy::validate() const {
  if (!(p_forest >= 0.0 && p_forest <= 1.0)) throw std::invalid_argument("MixPolicy: p_forest outside [0, 1]");
}

std::string_view generator_name(GeneratorKind kind) {
  return kind == GeneratorKind::kForest ? "forest" : "neural";
}

SampledDataset sample_episode(const EpisodeSourceConfig& source, const Rng& rng) {
  source.policy.validate();
  Rng choice = rng.derive(0);
  const bool forest = source.policy.p_forest >= 1.0 || (source.policy.p_forest > 0.0 && choice.bernoulli(source.policy.p_forest));
  Rng config_rng = rng.derive(1);
  const Rng data_rng = rng.derive(2);
  SampledDataset out;
  if (forest) {
    out.kind = GeneratorKind::kForest;
    out.dataset = generate_forest_dataset(sample_config(source.forest, config_rng), data_rng, source.limits);
  } else {
    out.kind = GeneratorKind::kNeural;
    out.dataset = generate_neural_dataset(sample_neural_config(source.neural, config_rng), data_rng, source.limits);
  }
  return out;
}

}  // namespace treeprior
