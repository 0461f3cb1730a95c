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
#include <span>
#include <string>
#include <vector>

#include "treeprior/dataset.hpp"

namespace treeprior {

struct TreeNode {
  static constexpr int kLeaf = -1;

  int feature = kLeaf;  // kLeaf for leaves
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;  // mean target of the node's training rows
  std::size_t n_samples = 0;

  bool is_leaf() const { return feature == kLeaf; }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

/// Greedy CART regression tree. Nodes are stored in pre-order (node, left
/// subtree, right subtree); node 0 is the root.
class RegressionTree {
 public:
  RegressionTree() = default;
  RegressionTree(std::vector<TreeNode> nodes, std::size_t n_features, int max_depth)
      : nodes_(std::move(nodes)), n_features_(n_features), max_depth_(max_depth) {}

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  std::size_t n_features() const { return n_features_; }
  int max_depth() const { return max_depth_; }

  std::size_t num_leaves() const;
  int depth() const;
  std::vector<double> leaf_values() const;

  double predict_row(std::span<const double> x) const;

  /// Node list as JSON, for inspection.
  std::string to_json() const;

 private:
  std::vector<TreeNode> nodes_;
  std::size_t n_features_ = 0;
  int max_depth_ = 0;
};

/// Fits a regression tree by exhaustive greedy variance reduction.
///
/// At every node all features and all midpoints between consecutive
/// distinct sorted values are scored; the largest reduction of squared
/// error wins, ties going to the lower feature index and then the lower
/// threshold. A node becomes a leaf at `max_depth`, when its targets are
/// constant, when it has fewer than two rows, or when no split reduces
/// the error. Rows with x[feature] <= threshold go left.
RegressionTree fit_regression_tree(const Matrix& X, std::span<const double> y, int max_depth);

/// Leaf value for every row of X.
std::vector<double> predict_tree(const RegressionTree& tree, const Matrix& X);

}  // namespace treeprior
