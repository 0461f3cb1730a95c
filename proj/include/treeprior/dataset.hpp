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
#include <stdexcept>
#include <string>
#include <vector>

namespace treeprior {

/// Row-major matrix of doubles for raw tabular data.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data) : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw std::invalid_argument("Matrix: data size does not match shape");
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * cols_, cols_); }
  std::span<const double> row(std::size_t r) const { return std::span<const double>(data_).subspan(r * cols_, cols_); }

  std::vector<double> column(std::size_t c) const {
    std::vector<double> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }
  void set_column(std::size_t c, std::span<const double> values) {
    for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = values[r];
  }

  /// Rows picked by index, in the given order (repeats allowed).
  Matrix select_rows(std::span<const std::size_t> idx) const;

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// A classification dataset before preprocessing.
struct RawDataset {
  Matrix X;
  std::vector<int> y;
  int n_classes = 0;
  std::vector<bool> categorical_mask;

  std::size_t size() const { return X.rows(); }
  RawDataset subset(std::span<const std::size_t> idx) const;

  friend bool operator==(const RawDataset&, const RawDataset&) = default;
};

class DegenerateDatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checks the dataset invariants: label range, at least two realized
/// classes, no NaN. Throws std::invalid_argument describing the first
/// violation.
void validate_dataset(const RawDataset& ds);

/// Number of distinct labels present.
int count_realized_classes(std::span<const int> y, int n_classes);

}  // namespace treeprior
