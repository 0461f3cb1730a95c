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

// Reference implementations written independently of the library code,
// kept deliberately naive. Shared by the unit tests and the acceptance run.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "treeprior/autodiff.hpp"
#include "treeprior/dataset.hpp"
#include "treeprior/rng.hpp"
#include "treeprior/tree.hpp"

namespace oracle {

// ---- greedy CART -------------------------------------------------------------

struct Node {
  int feature = -1;
  double threshold = 0;
  int left = -1, right = -1;
  double value = 0;
  std::size_t n = 0;
};

inline double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double sse_of(const std::vector<double>& v) {
  if (v.empty()) return 0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s;
}

// Tries every (feature, midpoint) pair by partitioning the rows from
// scratch and summing the two-pass squared errors.
inline void grow(const treeprior::Matrix& X, const std::vector<double>& y, const std::vector<std::size_t>& rows, int depth,
                 int max_depth, std::vector<Node>& out) {
  const int id = static_cast<int>(out.size());
  out.push_back({});
  std::vector<double> ys;
  for (auto r : rows) ys.push_back(y[r]);
  out[id].value = mean_of(ys);
  out[id].n = rows.size();
  const bool pure = std::all_of(ys.begin(), ys.end(), [&](double v) { return v == ys[0]; });
  if (depth >= max_depth || rows.size() < 2 || pure) return;

  const double parent = sse_of(ys);
  double best = std::numeric_limits<double>::infinity();
  int best_f = -1;
  double best_t = 0;
  for (std::size_t f = 0; f < X.cols(); ++f) {
    std::vector<double> vals;
    for (auto r : rows) vals.push_back(X(r, f));
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
      const double t = (vals[k] + vals[k + 1]) / 2;
      std::vector<double> l, r;
      for (auto row : rows) (X(row, f) <= t ? l : r).push_back(y[row]);
      const double s = sse_of(l) + sse_of(r);
      // Strictly better by more than rounding noise; earlier candidates
      // (lower feature, then lower threshold) win ties.
      if (s < best - 1e-12 * std::max(1.0, parent)) {
        best = s;
        best_f = static_cast<int>(f);
        best_t = t;
      }
    }
  }
  if (best_f < 0 || !(best < parent - 1e-12 * std::max(1.0, parent))) return;
  std::vector<std::size_t> l, r;
  for (auto row : rows) (X(row, static_cast<std::size_t>(best_f)) <= best_t ? l : r).push_back(row);
  out[id].feature = best_f;
  out[id].threshold = best_t;
  out[id].left = static_cast<int>(out.size());
  grow(X, y, l, depth + 1, max_depth, out);
  out[id].right = static_cast<int>(out.size());
  grow(X, y, r, depth + 1, max_depth, out);
}

inline std::vector<Node> cart(const treeprior::Matrix& X, const std::vector<double>& y, int max_depth) {
  std::vector<std::size_t> rows(X.rows());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  std::vector<Node> out;
  grow(X, y, rows, 0, max_depth, out);
  return out;
}

/// Node-for-node comparison; returns an empty string on a match.
inline std::string compare_tree(const treeprior::RegressionTree& t, const std::vector<Node>& o) {
  const auto& n = t.nodes();
  if (n.size() != o.size()) return "node count " + std::to_string(n.size()) + " vs " + std::to_string(o.size());
  for (std::size_t i = 0; i < n.size(); ++i) {
    const bool leaf = n[i].feature == treeprior::TreeNode::kLeaf;
    if (leaf != (o[i].feature < 0)) return "leaf mismatch at node " + std::to_string(i);
    if (!leaf && (n[i].feature != o[i].feature || n[i].threshold != o[i].threshold || n[i].left != o[i].left ||
                  n[i].right != o[i].right)) {
      return "split mismatch at node " + std::to_string(i);
    }
    if (std::abs(n[i].value - o[i].value) > 1e-12 || n[i].n_samples != o[i].n) {
      return "value mismatch at node " + std::to_string(i);
    }
  }
  return {};
}

// ---- complexity score ---------------------------------------------------------

/// Direct double loop over the four neighbor offsets.
inline double complexity(const std::vector<std::vector<double>>& p) {
  const int rx = static_cast<int>(p.size()), ry = static_cast<int>(p[0].size());
  const int di[4] = {1, -1, 0, 0}, dj[4] = {0, 0, 1, -1};
  double total = 0;
  for (int i = 0; i < rx; ++i) {
    for (int j = 0; j < ry; ++j) {
      for (int k = 0; k < 4; ++k) {
        const int a = i + di[k], b = j + dj[k];
        if (a < 0 || b < 0 || a >= rx || b >= ry) continue;
        total += std::abs(p[a][b] - p[i][j]);
      }
    }
  }
  return total / static_cast<double>(rx * ry);
}

// ---- midranks -----------------------------------------------------------------

/// O(n^2): rank = number strictly smaller plus half the number of other
/// equal values.
inline std::vector<double> midrank_uniform(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (v[j] < v[i]) less += 1;
      if (v[j] == v[i] && j != i) equal += 1;
    }
    out[i] = (less + equal / 2 + 0.5) / static_cast<double>(n);
  }
  return out;
}

// ---- ANOVA F -----------------------------------------------------------------

inline double anova_f(const std::vector<double>& x, const std::vector<int>& y, int k) {
  std::vector<std::vector<double>> groups(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < x.size(); ++i) groups[static_cast<std::size_t>(y[i])].push_back(x[i]);
  const double grand = mean_of(x);
  double ssb = 0, ssw = 0;
  int present = 0;
  for (const auto& g : groups) {
    if (g.empty()) continue;
    ++present;
    const double m = mean_of(g);
    ssb += static_cast<double>(g.size()) * (m - grand) * (m - grand);
    for (double v : g) ssw += (v - m) * (v - m);
  }
  return (ssb / (present - 1)) / (ssw / (static_cast<double>(x.size()) - present));
}

// ---- finite differences ---------------------------------------------------------

struct GradCheck {
  double max_rel_error = 0;
  std::size_t checked = 0;
};

/// Relative error with a floor on the denominator so that coordinates whose
/// derivative is essentially zero compare on an absolute scale.
inline double rel_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central differences of the scalar `loss` with respect to the given leaf
/// tensors, at up to `per_tensor` coordinates each (all when 0), plus one
/// random direction over all of them.
inline GradCheck check_gradients(
    std::vector<treeprior::Tensor<double>> inputs,
    const std::function<treeprior::ad::Var<double>(const std::vector<treeprior::ad::Var<double>>&)>& loss,
    treeprior::Rng& rng, std::size_t per_tensor = 0, double h = 1e-5, double floor = 1e-7) {
  using treeprior::ad::Tape;
  using treeprior::ad::Var;
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  const Var<double> out = loss(leaves);
  tape.backward(out);
  std::vector<treeprior::Tensor<double>> analytic;
  for (const auto& l : leaves) analytic.push_back(l.grad().empty() ? treeprior::Tensor<double>(l.shape()) : l.grad());

  auto eval = [&](const std::vector<treeprior::Tensor<double>>& xs) {
    std::vector<Var<double>> cs;
    for (const auto& t : xs) cs.push_back(treeprior::ad::constant(t));
    return loss(cs).value()[0];
  };

  GradCheck res;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const std::size_t n = inputs[t].size();
    std::vector<std::size_t> coords;
    if (per_tensor == 0 || per_tensor >= n) {
      for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      coords = treeprior::sample_without_replacement(n, per_tensor, rng);
    }
    for (std::size_t i : coords) {
      const double orig = inputs[t][i];
      inputs[t][i] = orig + h;
      const double up = eval(inputs);
      inputs[t][i] = orig - h;
      const double down = eval(inputs);
      inputs[t][i] = orig;
      const double numeric = (up - down) / (2 * h);
      res.max_rel_error = std::max(res.max_rel_error, rel_error(analytic[t][i], numeric, floor));
      ++res.checked;
    }
  }

  // Directional derivative along a random unit-scale direction.
  std::vector<treeprior::Tensor<double>> dir;
  double analytic_dir = 0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    treeprior::Tensor<double> d(inputs[t].shape());
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] = rng.normal();
      analytic_dir += d[i] * analytic[t][i];
    }
    dir.push_back(std::move(d));
  }
  auto shifted = [&](double s) {
    auto xs = inputs;
    for (std::size_t t = 0; t < xs.size(); ++t)
      for (std::size_t i = 0; i < xs[t].size(); ++i) xs[t][i] += s * dir[t][i];
    return eval(xs);
  };
  const double numeric_dir = (shifted(h) - shifted(-h)) / (2 * h);
  res.max_rel_error = std::max(res.max_rel_error, rel_error(analytic_dir, numeric_dir, floor));
  ++res.checked;
  return res;
}

}  // namespace oracle
