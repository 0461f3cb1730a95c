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

// File formats. All binary formats are little-endian with fixed-width
// fields:
//
//   checkpoint:   "TFPN" u32 version  u32 header_len  header (JSON)
//                 f32 values of every parameter tensor in ParamLayout order
//   episode file: "TFEP" u32 version  u32 header_len  header (JSON)
//                 f32 support features (row-major), f32 query features,
//                 u16 support labels, u16 query labels

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "treeprior/dataset.hpp"
#include "treeprior/model.hpp"
#include "treeprior/training.hpp"

namespace treeprior {

/// Unreadable or structurally invalid input file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A requested column does not exist.
class MissingColumnError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint contents disagree with its declared config.
class ConfigMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kEpisodeFileVersion = 1;

struct Checkpoint {
  ModelParams<float> params;
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  /// Hex digest of the pretraining config, empty when unknown.
  std::string pretrain_digest;
};

/// Stable digest of the fields that shape a pretraining run.
std::string pretrain_digest(const PretrainConfig& config);

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError on bad magic, version or truncation and
/// ConfigMismatchError when the blob does not fit the declared model.
Checkpoint decode_checkpoint(std::string_view bytes);

struct EpisodeFile {
  Matrix X_support;
  std::vector<int> y_support;
  Matrix X_query;
  std::vector<int> y_query;
  int n_classes = 2;
  std::vector<bool> categorical_mask;
  std::uint64_t seed = 0;
  std::string generator;

  friend bool operator==(const EpisodeFile&, const EpisodeFile&) = default;
};

std::string encode_episode(const EpisodeFile& ep);
EpisodeFile decode_episode(std::string_view bytes);

/// Whole dataset as support rows, no query.
EpisodeFile episode_from_dataset(const RawDataset& ds, std::uint64_t seed, std::string generator);

/// Column coding learned from a training CSV and reused for other splits.
struct CsvSchema {
  std::vector<std::string> feature_names;
  std::string target;
  /// Per feature: category strings in code order; empty for numeric columns.
  std::vector<std::vector<std::string>> categories;
  /// Target strings in label order.
  std::vector<std::string> classes;
};

struct CsvTable {
  RawDataset data;
  CsvSchema schema;
  /// False when the target column was absent (allowed only with a schema).
  bool has_target = true;
};

/// Reads a headed CSV. Empty cells become NaN. A column with any
/// non-numeric cell is categorical, coded by first appearance. Labels map
/// to 0..k-1 in ascending numeric order when every label is numeric, else
/// in first-appearance order. With `schema`, the column coding of the
/// training split is reused: unseen categories become NaN, unseen labels
/// are an error, and the target column may be missing.
CsvTable read_csv(std::string_view text, const std::string& target, const CsvSchema* schema = nullptr);
CsvTable read_csv_file(const std::filesystem::path& path, const std::string& target, const CsvSchema* schema = nullptr);

/// Header x0..x{d-1},y; values in shortest round-trip form.
std::string dataset_to_csv(const RawDataset& ds);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace treeprior
