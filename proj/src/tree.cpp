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

#include "treeprior/tree.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace treeprior {

namespace {

struct SplitChoice {
  int feature = TreeNode::kLeaf;
  double threshold = 0.0;
  double gain = 0.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& X, std::span<const double> y, int max_depth) : X_(X), y_(y), max_depth_(max_depth) {}

  std::vector<TreeNode> build() {
    std::vector<std::size_t> rows(X_.rows());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    grow(rows, 0);
    return std::move(nodes_);
  }

 private:
  int grow(std::vector<std::size_t>& rows, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    double total = 0;
    for (auto r : rows) total += y_[r];
    nodes_[id].value = total / static_cast<double>(rows.size());
    nodes_[id].n_samples = rows.size();

    if (depth >= max_depth_ || rows.size() < 2 || is_pure(rows)) return id;
    const SplitChoice split = best_split(rows, total);
    if (split.feature == TreeNode::kLeaf) return id;

    std::vector<std::size_t> left, right;
    for (auto r : rows) (X_(r, static_cast<std::size_t>(split.feature)) <= split.threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();

    nodes_[id].feature = split.feature;
    nodes_[id].threshold = split.threshold;
    const int l = grow(left, depth + 1);
    const int r = grow(right, depth + 1);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  bool is_pure(const std::vector<std::size_t>& rows) const {
    const double first = y_[rows.front()];
    return std::all_of(rows.begin(), rows.end(), [&](std::size_t r) { return y_[r] == first; });
  }

  SplitChoice best_split(const std::vector<std::size_t>& rows, double total) {
    const std::size_t n = rows.size();
    const double parent_score = total * total / static_cast<double>(n);
    double sumsq = 0;
    for (auto r : rows) sumsq += y_[r] * y_[r];
    // Candidates whose scores differ only by rounding count as ties, so the
    // earliest (feature, threshold) wins regardless of row order.
    const double tol = 1e-12 * std::max(1.0, sumsq - parent_score);
    SplitChoice best;
    double best_score = -std::numeric_limits<double>::infinity();
    order_.resize(n);
    for (std::size_t f = 0; f < X_.cols(); ++f) {
      for (std::size_t i = 0; i < n; ++i) order_[i] = {X_(rows[i], f), y_[rows[i]]};
      std::sort(order_.begin(), order_.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      double left_sum = 0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        left_sum += order_[i].second;
        const double lo = order_[i].first, hi = order_[i + 1].first;
        if (!(lo < hi)) continue;
        const double nl = static_cast<double>(i + 1), nr = static_cast<double>(n - i - 1);
        const double right_sum = total - left_sum;
        // SSE reduction = sum_L^2/n_L + sum_R^2/n_R - sum^2/n.
        const double score = left_sum * left_sum / nl + right_sum * right_sum / nr;
        if (score > best_score + tol) {
          best_score = score;
          double mid = (lo + hi) / 2;
          if (!(mid < hi)) mid = lo;
          best = {static_cast<int>(f), mid, score - parent_score};
        }
      }
    }
    if (best.feature == TreeNode::kLeaf || !(best.gain > tol)) return {};
    return best;
  }

  const Matrix& X_;
  std::span<const double> y_;
  int max_depth_;
  std::vector<TreeNode> nodes_;
  std::vector<std::pair<double, double>> order_;
};

}  // namespace

RegressionTree fit_regression_tree(const Matrix& X, std::span<const double> y, int max_depth) {
  if (X.rows() == 0 || X.cols() == 0) throw std::invalid_argument("fit_regression_tree: empty input");
  if (y.size() != X.rows()) throw std::invalid_argument("fit_regression_tree: target length does not match rows");
  if (max_depth < 0) throw std::invalid_argument("fit_regression_tree: negative max_depth");
  TreeBuilder builder(X, y, max_depth);
  return RegressionTree(builder.build(), X.cols(), max_depth);
}

double RegressionTree::predict_row(std::span<const double> x) const {
  if (x.size() != n_features_) throw std::invalid_argument("predict_tree: feature count does not match the fitted tree");
  std::size_t id = 0;
  while (!nodes_[id].is_leaf()) {
    const auto& node = nodes_[id];
    id = static_cast<std::size_t>(x[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left : node.right);
  }
  return nodes_[id].value;
}

std::vector<double> predict_tree(const RegressionTree& tree, const Matrix& X) {
  if (X.cols() != tree.n_features()) throw std::invalid_argument("predict_tree: feature count does not match the fitted tree");
  std::vector<double> out(X.rows());
  for (std::size_t r = 0; r < X.rows(); ++r) out[r] = tree.predict_row(X.row(r));
  return out;
}

std::size_t RegressionTree::num_leaves() const {
  return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

int RegressionTree::depth() const {
  if (nodes_.empty()) return 0;
  std::function<int(std::size_t)> rec = [&](std::size_t id) -> int {
    const auto& n = nodes_[id];
    if (n.is_leaf()) return 0;
    return 1 + std::max(rec(static_cast<std::size_t>(n.left)), rec(static_cast<std::size_t>(n.right)));
  };
  return rec(0);
}

std::vector<double> RegressionTree::leaf_values() const {
  std::vector<double> out;
  for (const auto& n : nodes_)
    if (n.is_leaf()) out.push_back(n.value);
  return out;
}

std::string RegressionTree::to_json() const {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : nodes_) {
    if (n.is_leaf()) {
      nodes.push_back({{"leaf_value", n.value}, {"n_samples", n.n_samples}});
    } else {
      nodes.push_back({{"split_feature", n.feature},
                       {"threshold", n.threshold},
                       {"left", n.left},
                       {"right", n.right},
                       {"n_samples", n.n_samples}});
    }
  }
  return nlohmann::json{{"max_depth", max_depth_}, {"n_features", n_features_}, {"nodes", nodes}}.dump(2);
}

}  // namespace treeprior
