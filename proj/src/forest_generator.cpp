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

#include "treeprior/forest_generator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "treeprior/tree.hpp"

namespace treeprior {

namespace {

void check_range(IntRange r, int min_allowed, const char* name) {
  if (r.lo > r.hi || r.lo < min_allowed) {
    throw std::invalid_argument(std::string("bounds: invalid range for ") + name + ": [" + std::to_string(r.lo) + ", " +
                                std::to_string(r.hi) + "]");
  }
}

constexpr int kBoundaryRetries = 16;

}  // namespace

void ForestGenBounds::validate() const {
  check_range(base_size, 1, "base_size");
  check_range(dataset_size, 2, "dataset_size");
  check_range(tree_depth, 0, "tree_depth");
  check_range(n_features, 1, "n_features");
  check_range(n_classes, 2, "n_classes");
  if (n_classes.hi > 10) throw std::invalid_argument("bounds: n_classes above the 10-way head");
  if (!(categorical_ratio.lo <= categorical_ratio.hi) || categorical_ratio.lo < 0.0 || categorical_ratio.hi > 1.0) {
    throw std::invalid_argument("bounds: categorical_ratio must satisfy 0 <= lo <= hi <= 1");
  }
}

void ForestGenConfig::validate() const {
  ForestGenBounds b{{base_size, base_size},   {dataset_size, dataset_size}, {tree_depth, tree_depth},
                    {n_features, n_features}, {n_classes, n_classes},       {categorical_ratio, categorical_ratio}};
  b.validate();
}

ForestGenConfig sample_config(const ForestGenBounds& bounds, Rng& rng, std::uint64_t seed, std::uint64_t stream) {
  bounds.validate();
  ForestGenConfig c;
  c.base_size = static_cast<int>(rng.uniform_int(bounds.base_size.lo, bounds.base_size.hi));
  c.dataset_size = static_cast<int>(rng.uniform_int(bounds.dataset_size.lo, bounds.dataset_size.hi));
  c.tree_depth = static_cast<int>(rng.uniform_int(bounds.tree_depth.lo, bounds.tree_depth.hi));
  c.n_features = static_cast<int>(rng.uniform_int(bounds.n_features.lo, bounds.n_features.hi));
  c.n_classes = static_cast<int>(rng.uniform_int(bounds.n_classes.lo, bounds.n_classes.hi));
  c.categorical_ratio = bounds.categorical_ratio.lo == bounds.categorical_ratio.hi
                            ? bounds.categorical_ratio.lo
                            : rng.uniform(bounds.categorical_ratio.lo, bounds.categorical_ratio.hi);
  c.seed = seed;
  c.stream = stream;
  return c;
}

std::vector<double> quantile_to_uniform(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> out(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j);
    for (std::size_t t = i; t <= j; ++t) out[order[t]] = (midrank + 0.5) / static_cast<double>(n);
    i = j + 1;
  }
  return out;
}

std::vector<int> bucketize(std::span<const double> u, std::span<const double> boundaries) {
  std::vector<int> labels(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    labels[i] = static_cast<int>(std::lower_bound(boundaries.begin(), boundaries.end(), u[i]) - boundaries.begin());
  }
  return labels;
}

std::vector<int> discretize_targets(std::span<const double> u, int n_classes, Rng& rng) {
  if (n_classes < 2) throw std::invalid_argument("discretize_targets: need at least 2 classes");
  std::vector<double> boundaries(static_cast<std::size_t>(n_classes - 1));
  for (int attempt = 0; attempt < kBoundaryRetries; ++attempt) {
    for (auto& b : boundaries) b = rng.uniform_open();
    std::sort(boundaries.begin(), boundaries.end());
    auto labels = bucketize(u, boundaries);
    if (count_realized_classes(labels, n_classes) >= 2) return labels;
  }
  throw DegenerateDatasetError("discretize_targets: fewer than 2 classes after all boundary draws");
}

void bin_by_quantiles(std::span<double> column, int k) {
  if (k < 1) throw std::invalid_argument("bin_by_quantiles: k must be positive");
  const std::size_t n = column.size();
  std::vector<double> sorted(column.begin(), column.end());
  std::sort(sorted.begin(), sorted.end());
  for (auto& v : column) {
    const auto rank = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), v) - sorted.begin());
    v = static_cast<double>((static_cast<std::size_t>(k) * rank) / n);
  }
}

std::vector<bool> convert_to_categorical(Matrix& X, double ratio, Rng& rng, int k_min, int k_max) {
  if (ratio < 0.0 || ratio > 1.0) throw std::invalid_argument("convert_to_categorical: ratio outside [0, 1]");
  const std::size_t d = X.cols();
  std::vector<bool> mask(d, false);
  const auto count = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(d)));
  if (count == 0) return mask;
  for (std::size_t c : sample_without_replacement(d, count, rng)) {
    const int k = static_cast<int>(rng.uniform_int(k_min, k_max));
    auto col = X.column(c);
    bin_by_quantiles(col, k);
    X.set_column(c, col);
    mask[c] = true;
  }
  return mask;
}

bool class_balance_ok(std::span<const int> y, int n_classes, const GenerationLimits& limits) {
  if (limits.class_balance_tolerance < 0.0) return true;
  std::vector<std::size_t> counts(static_cast<std::size_t>(n_classes), 0);
  for (int label : y) ++counts[static_cast<std::size_t>(label)];
  const double target = 1.0 / n_classes;
  return std::all_of(counts.begin(), counts.end(), [&](std::size_t c) {
    return std::abs(static_cast<double>(c) / static_cast<double>(y.size()) - target) <= limits.class_balance_tolerance;
  });
}

ForestSample generate_forest_sample(const ForestGenConfig& config, const Rng& rng, const GenerationLimits& limits) {
  config.validate();
  const auto n_base = static_cast<std::size_t>(config.base_size);
  const auto n = static_cast<std::size_t>(config.dataset_size);
  const auto d = static_cast<std::size_t>(config.n_features);
  for (int attempt = 0; attempt < limits.max_attempts; ++attempt) {
    Rng r = rng.derive(static_cast<std::uint64_t>(attempt));

    Matrix X(n_base, d);
    for (auto& v : X.data()) v = r.normal();
    std::vector<double> y(n_base);
    for (auto& v : y) v = r.normal();
    const RegressionTree tree = fit_regression_tree(X, y, config.tree_depth);

    Matrix X2(n, d);
    for (auto& v : X2.data()) v = r.normal();
    std::vector<bool> mask = convert_to_categorical(X2, config.categorical_ratio, r);
    std::vector<double> y2 = predict_tree(tree, X2);
    const std::vector<double> u = quantile_to_uniform(y2);

    std::vector<int> labels;
    try {
      labels = discretize_targets(u, config.n_classes, r);
    } catch (const DegenerateDatasetError&) {
      continue;
    }
    if (!class_balance_ok(labels, config.n_classes, limits)) continue;

    ForestSample sample;
    sample.dataset.X = std::move(X2);
    sample.dataset.y = std::move(labels);
    sample.dataset.n_classes = config.n_classes;
    sample.dataset.categorical_mask = std::move(mask);
    sample.raw_targets = std::move(y2);
    sample.attempts = attempt + 1;
    return sample;
  }
  throw DegenerateDatasetError("generate_forest_dataset: no usable dataset after " +
                               std::to_string(limits.max_attempts) + " attempts");
}

RawDataset generate_forest_dataset(const ForestGenConfig& config, const Rng& rng, const GenerationLimits& limits) {
  return generate_forest_sample(config, rng, limits).dataset;
}

}  // namespace treeprior
