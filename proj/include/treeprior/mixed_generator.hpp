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

// Random-MLP dataset prior and the per-episode mixing policy.
//
// The neural prior is a small stand-in for a structural-causal-model
// prior: Gaussian inputs pushed through a randomly initialized tanh network
// give smooth, oblique class boundaries instead of axis-aligned boxes.

#pragma once

#include <cstdint>
#include <string_view>

#include "treeprior/forest_generator.hpp"

namespace treeprior {

struct NeuralGenConfig {
  int n_features = 3;
  int n_classes = 2;
  int dataset_size = 1024;
  int hidden_layers = 1;
  int hidden_width = 16;
  double noise_scale = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  void validate() const;
  friend bool operator==(const NeuralGenConfig&, const NeuralGenConfig&) = default;
};

struct NeuralGenBounds {
  IntRange dataset_size{128, 1024};
  IntRange n_features{3, 100};
  IntRange n_classes{2, 10};
  IntRange hidden_layers{1, 4};
  IntRange hidden_width{4, 64};
  RealRange noise_scale{0.0, 0.3};

  void validate() const;
};

NeuralGenConfig sample_neural_config(const NeuralGenBounds& bounds, Rng& rng, std::uint64_t seed = 0,
                                     std::uint64_t stream = 0);

/// Gaussian X through a random tanh MLP to a scalar, plus Gaussian noise,
/// then the same quantile/bucket labeling as the forest generator.
RawDataset generate_neural_dataset(const NeuralGenConfig& config, const Rng& rng, const GenerationLimits& limits = {});

/// Probability that a pretraining episode comes from the forest generator.
/// 0 uses only the neural prior, 1 only the forest prior.
struct MixPolicy {
  double p_forest = 0.5;
  void validate() const;
};

enum class GeneratorKind : std::uint8_t { kForest = 0, kNeural = 1 };

std::string_view generator_name(GeneratorKind kind);

struct EpisodeSourceConfig {
  MixPolicy policy;
  ForestGenBounds forest;
  NeuralGenBounds neural;
  GenerationLimits limits;
};

struct SampledDataset {
  RawDataset dataset;
  GeneratorKind kind = GeneratorKind::kForest;
};

/// Bernoulli(p_forest) choice of generator, then a config draw and a
/// dataset draw on derived streams of `rng`.
SampledDataset sample_episode(const EpisodeSourceConfig& source, const Rng& rng);

}  // namespace treeprior
