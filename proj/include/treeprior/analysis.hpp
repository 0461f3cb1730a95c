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

// Decision-boundary grids, their complexity score, and benchmark tables.

#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "treeprior/training.hpp"

namespace treeprior {

/// Class-1 probabilities on a regular grid over two features.
struct ProbabilityGrid {
  std::size_t res_x = 0;
  std::size_t res_y = 0;
  std::size_t feature_x = 0;
  std::size_t feature_y = 1;
  double x_min = 0, x_max = 0;
  double y_min = 0, y_max = 0;
  /// Raw-scale values of every input feature at which the grid is sliced;
  /// entries feature_x and feature_y are ignored.
  std::vector<double> baseline;
  /// p[i * res_y + j]: cell i along x, cell j along y.
  std::vector<double> p;

  double at(std::size_t i, std::size_t j) const { return p[i * res_y + j]; }
  double cell_x(std::size_t i) const;
  double cell_y(std::size_t j) const;
};

/// Mean over cells of the summed absolute differences to the in-grid
/// 4-neighbors. Throws std::invalid_argument on an empty grid.
double complexity_score(const ProbabilityGrid& grid);

/// Evaluates class-1 probabilities at the cell centers of an r_x by r_y
/// grid spanning the test-set range of two features, other features at
/// their test-set medians. Support is the training data; cells go through
/// as query rows in chunks of caps.max_query.
ProbabilityGrid boundary_grid(const ModelParams<float>& params, const RawDataset& train, const Matrix& test,
                              std::size_t feature_x, std::size_t feature_y, std::size_t res_x, std::size_t res_y,
                              const EpisodeCaps& caps, Rng& rng);

/// CSV with header i,j,x,y,p.
std::string grid_to_csv(const ProbabilityGrid& grid);

/// Binary PGM (P5): x to the right, y upward, p = 1 white.
std::string grid_to_pgm(const ProbabilityGrid& grid);

/// Accuracy of every method on every dataset.
struct MethodResults {
  std::vector<std::string> methods;
  std::vector<std::string> datasets;
  /// accuracy[d][m]
  std::vector<std::vector<double>> accuracy;

  void validate() const;
};

struct SummaryStats {
  double min = 0, max = 0, mean = 0, median = 0;
};

/// Per dataset, (acc - min) / (max - min) over methods, or 1 for every
/// method when all tie. Result indexed [dataset][method].
std::vector<std::vector<double>> normalized_accuracy(const MethodResults& results);

/// Per-dataset ranks (1 = best, ties averaged), indexed [dataset][method].
std::vector<std::vector<double>> ranks(const MethodResults& results);

SummaryStats summarize(std::vector<double> values);

struct MethodSummary {
  std::string method;
  SummaryStats rank;
  SummaryStats normalized_accuracy;
  SummaryStats accuracy;
};

/// Rank, normalized-accuracy and accuracy statistics per method.
std::vector<MethodSummary> rank_table(const MethodResults& results);

MethodResults results_from_json(const std::string& text);
std::string summary_to_json(const std::vector<MethodSummary>& rows);
std::string summary_to_text(const std::vector<MethodSummary>& rows);

}  // namespace treeprior
