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

#include "treeprior/dataset.hpp"

#include <algorithm>
#include <cmath>

namespace treeprior {

Matrix Matrix::select_rows(std::span<const std::size_t> idx) const {
  Matrix out(idx.size(), cols_);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = row(idx[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

RawDataset RawDataset::subset(std::span<const std::size_t> idx) const {
  RawDataset out;
  out.X = X.select_rows(idx);
  out.y.reserve(idx.size());
  for (auto i : idx) out.y.push_back(y[i]);
  out.n_classes = n_classes;
  out.categorical_mask = categorical_mask;
  return out;
}

int count_realized_classes(std::span<const int> y, int n_classes) {
  std::vector<bool> seen(static_cast<std::size_t>(std::max(n_classes, 0)), false);
  int count = 0;
  for (int label : y) {
    if (label >= 0 && label < n_classes && !seen[static_cast<std::size_t>(label)]) {
      seen[static_cast<std::size_t>(label)] = true;
      ++count;
    }
  }
  return count;
}

void validate_dataset(const RawDataset& ds) {
  if (ds.y.size() != ds.X.rows()) throw std::invalid_argument("dataset: label count does not match rows");
  for (int label : ds.y) {
    if (label < 0 || label >= ds.n_classes) {
      throw std::invalid_argument("dataset: label " + std::to_string(label) + " outside [0, " +
                                  std::to_string(ds.n_classes) + ")");
    }
  }
  if (count_realized_classes(ds.y, ds.n_classes) < 2) throw std::invalid_argument("dataset: fewer than 2 classes");
  for (double v : ds.X.data()) {
    if (std::isnan(v)) throw std::invalid_argument("dataset: NaN feature");
  }
  if (!ds.categorical_mask.empty() && ds.categorical_mask.size() != ds.X.cols()) {
    throw std::invalid_argument("dataset: categorical mask width mismatch");
  }
}

}  // namespace treeprior
