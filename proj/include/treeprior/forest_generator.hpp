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

// Synthetic classification datasets labeled by an overfit regression tree.
//
// A tree is fit to pure noise (Gaussian features, Gaussian targets), then
// used as the labeling function for a fresh Gaussian sample. The resulting
// class regions are unions of axis-aligned boxes whose intricacy grows
// with the base size and the tree depth.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "treeprior/dataset.hpp"
#include "treeprior/rng.hpp"

namespace treeprior {

struct IntRange {
  int lo = 0;
  int hi = 0;
  friend bool operator==(const IntRange&, const IntRange&) = default;
};

struct RealRange {
  double lo = 0.0;
  double hi = 0.0;
  friend bool operator==(const RealRange&, const RealRange&) = default;
};

/// Sampling bounds of the forest generator. Defaults are the reference
/// bounds; ablations narrow or widen them.
struct ForestGenBounds {
  IntRange base_size{1024, 1024};
  IntRange dataset_size{128, 1024};
  IntRange tree_depth{1, 25};
  IntRange n_features{3, 100};
  IntRange n_classes{2, 10};
  RealRange categorical_ratio{0.0, 1.0};

  /// Throws std::invalid_argument on an empty or out-of-domain range.
  void validate() const;
};

struct ForestGenConfig {
  int base_size = 1024;
  int dataset_size = 1024;
  int tree_depth = 1;
  int n_features = 3;
  int n_classes = 2;
  double categorical_ratio = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  void validate() const;
  friend bool operator==(const ForestGenConfig&, const ForestGenConfig&) = default;
};

/// Rejection rules shared by the generators.
struct GenerationLimits {
  /// Full redraws allowed before giving up.
  int max_attempts = 16;
  /// When >= 0, every class must hold a fraction within
  /// [1/k - tol, 1/k + tol] of the rows, otherwise the draw is rejected.
  double class_balance_tolerance = -1.0;
};

/// Uniform draw of every hyperparameter within its bounds (integers
/// inclusive). Records `seed`/`stream` in the config.
ForestGenConfig sample_config(const ForestGenBounds& bounds, Rng& rng, std::uint64_t seed = 0,
                              std::uint64_t stream = 0);

/// Midrank transform: (rank + 0.5) / n with zero-based ranks, ties sharing
/// their average rank.
std::vector<double> quantile_to_uniform(std::span<const double> v);

/// Label = number of boundaries strictly below u. Boundaries must be sorted.
std::vector<int> bucketize(std::span<const double> u, std::span<const double> boundaries);

/// Draws n_classes - 1 sorted uniform boundaries and bucketizes u; redraws
/// the boundaries up to 16 times while fewer than two classes appear.
/// Throws DegenerateDatasetError when every draw is degenerate.
std::vector<int> discretize_targets(std::span<const double> u, int n_classes, Rng& rng);

/// Replaces the column by equal-frequency bin codes 0..k-1 (as reals): a
/// value's code is floor(k * rank / n) with ties taking their lowest rank.
void bin_by_quantiles(std::span<double> column, int k);

/// Converts round(ratio * cols) randomly chosen columns to categorical codes
/// with k ~ Uniform{k_min..k_max} levels each. Returns the categorical mask.
std::vector<bool> convert_to_categorical(Matrix& X, double ratio, Rng& rng, int k_min = 2, int k_max = 10);

/// Dataset plus the tree outputs it was discretized from.
struct ForestSample {
  RawDataset dataset;
  std::vector<double> raw_targets;
  int attempts = 1;
};

/// Full generation procedure. Attempt a (0-based) draws everything from
/// rng.derive(a); degenerate draws move on to the next attempt.
ForestSample generate_forest_sample(const ForestGenConfig& config, const Rng& rng, const GenerationLimits& limits = {});

RawDataset generate_forest_dataset(const ForestGenConfig& config, const Rng& rng, const GenerationLimits& limits = {});

/// True when the labels satisfy the balance rule of `limits`.
bool class_balance_ok(std::span<const int> y, int n_classes, const GenerationLimits& limits);

}  // namespace treeprior
