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

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "treeprior/dataset.hpp"
#include "treeprior/rng.hpp"

namespace treeprior {

/// Fixed model input width.
inline constexpr std::size_t kModelFeatures = 100;
/// Size of the fixed classification head.
inline constexpr int kMaxClasses = 10;

/// Fitted preprocessing. Immutable once built; apply never refits.
struct PreprocessState {
  std::size_t n_input_features = 0;
  std::vector<double> column_means;           // per input column, NaN-free
  std::vector<std::size_t> kept_features;     // input column indices, ascending
  std::vector<std::vector<double>> quantiles; // per kept feature, sorted reference values
  std::vector<double> post_mean;              // after the normal quantile transform
  std::vector<double> post_std;

  std::size_t d_f_star() const { return kept_features.size(); }
  double feature_scale() const { return static_cast<double>(kModelFeatures) / static_cast<double>(d_f_star()); }
};

/// One (support, query) pair at the fixed model width.
struct Episode {
  Matrix X_support;
  std::vector<int> y_support;
  Matrix X_query;
  std::optional<std::vector<int>> y_query;
  int n_classes = 2;

  std::size_t n_support() const { return X_support.rows(); }
  std::size_t n_query() const { return X_query.rows(); }
};

/// Throws std::invalid_argument if widths, labels or values break the
/// episode contract.
void validate_episode(const Episode& ep);

/// One-way ANOVA F per column. A column with no within-class spread scores
/// +infinity when its class means differ and 0 when they do not.
std::vector<double> anova_f_scores(const Matrix& X, std::span<const int> y, int n_classes);

/// Inverse standard normal CDF by Acklam's rational approximation
/// (relative error below 1.15e-9). p must lie in (0, 1).
double inverse_normal_cdf(double p);

/// Empirical CDF of x against sorted reference quantiles at evenly spaced
/// levels, interpolated linearly; a run of equal references maps to the
/// midpoint of its levels.
double reference_cdf(std::span<const double> quantiles, double x);

/// Fits imputation means, drops single-valued columns, keeps the 100 best
/// columns by ANOVA F, and records quantile references (at most 1000 per
/// column) and post-transform normalization statistics.
PreprocessState fit_preprocess(const Matrix& X, std::span<const int> y, int n_classes);

/// Impute, select, quantile-transform to normal, standardize, scale by
/// 100 / d_f_star and zero-pad to 100 columns.
Matrix apply_preprocess(const PreprocessState& state, const Matrix& X);

/// Applies one random permutation to the 100 feature columns of support
/// and query and one random relabeling to the classes of both.
Episode shuffle_augment(const Episode& ep, Rng& rng);

/// Same as shuffle_augment with explicit permutations: column c of the
/// output is column feature_perm[c] of the input; label k becomes
/// class_map[k].
Episode permute_episode(const Episode& ep, std::span<const std::size_t> feature_perm, std::span<const int> class_map);

}  // namespace treeprior
