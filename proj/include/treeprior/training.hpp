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

// Pretraining on synthetic episodes, fine-tuning with early stopping, and
// zero-shot inference.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "treeprior/mixed_generator.hpp"
#include "treeprior/model.hpp"
#include "treeprior/optim.hpp"
#include "treeprior/preprocess.hpp"

namespace treeprior {

struct EpisodeCaps {
  std::size_t max_support = 1024;
  std::size_t max_query = 128;
};

struct PretrainConfig {
  std::int64_t steps = 3000;
  std::size_t batch_size = 32;
  double lr = 1e-4;
  double grad_clip = 1.0;
  EpisodeCaps caps{1024, 128};
  EpisodeSourceConfig source;
  std::uint64_t seed = 0;
  /// Log (and validation) period in steps; 0 disables logging.
  std::int64_t log_every = 100;
  /// Held-out synthetic episodes scored at each log step.
  std::size_t n_val_episodes = 16;
  /// Worker threads for per-episode gradients. Results do not depend on it.
  std::size_t threads = 1;
  /// Full redraws of one episode slot when generation keeps failing.
  int max_episode_retries = 64;
  AdamWHyper optimizer;

  /// 3,000 steps, batch 32, learning rate 1e-3.
  static PretrainConfig desk();
  /// 50,000 steps, batch 512, learning rate 1e-4.
  static PretrainConfig reference();
  void validate() const;
};

struct FinetuneConfig {
  double lr = 1e-5;
  std::size_t batch_size = 1;
  std::int64_t max_steps = 300;
  std::int64_t patience = 16;
  EpisodeCaps caps{8192, 1024};
  std::uint64_t seed = 0;
  bool early_stop = true;
  double grad_clip = 1.0;
  AdamWHyper optimizer;

  void validate() const;
};

struct LogRecord {
  std::int64_t step = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  double lr = 0.0;

  /// One line of JSON: {"step":..,"train_loss":..,"val_loss":..|null,"lr":..}
  std::string to_json() const;
};

using LogSink = std::function<void(const LogRecord&)>;

/// Preprocessed rows at model width.
struct PreparedSet {
  Matrix X;
  std::vector<int> y;
  int n_classes = 2;
  std::size_t size() const { return X.rows(); }
};

/// Fits preprocessing on `train` and applies it to `train`.
struct PreparedTask {
  PreprocessState state;
  PreparedSet train;
};
PreparedTask prepare_task(const RawDataset& train);

/// Applies fitted preprocessing to another split of the same task.
PreparedSet prepare_split(const PreprocessState& state, const RawDataset& split, int n_classes);

/// Turns one synthetic dataset into a pretraining episode: random
/// support/query split (query = min(max_query, n/2), support = the rest up
/// to max_support), preprocessing fitted on the support rows, then feature
/// and class shuffling.
Episode make_pretrain_episode(const RawDataset& ds, const EpisodeCaps& caps, Rng& rng);

/// Episode `index` of the synthetic stream under `rng`; failed draws are
/// redrawn on further derived streams.
Episode synthetic_episode(const EpisodeSourceConfig& source, const EpisodeCaps& caps, const Rng& rng,
                          int max_retries = 64);

struct PretrainResult {
  ModelParams<float> params;
  /// Mean batch loss of every step.
  std::vector<double> step_losses;
  std::vector<LogRecord> log;
};

/// AdamW with global-norm clipping under a cosine schedule, on fresh
/// synthetic episodes each step. Throws NonFiniteError on a non-finite loss.
PretrainResult pretrain(const ModelConfig& model, const PretrainConfig& config, const LogSink& sink = {});

/// Same loop starting from given parameters.
PretrainResult pretrain_from(ModelParams<float> init, const PretrainConfig& config, const LogSink& sink = {});

/// Mean over episodes of mean query cross-entropy, and its gradient.
struct BatchGradient {
  double loss = 0.0;
  std::vector<Tensor<float>> grads;
};
BatchGradient batch_gradient(const ModelParams<float>& params, std::span<const Episode> episodes,
                             std::size_t threads = 1);

/// Random disjoint split: 20% query (floored, at least 1), the rest
/// support (at least 1), each then subsampled uniformly to its cap.
Episode draw_finetune_episode(const PreparedSet& train, Rng& rng, const EpisodeCaps& caps);

/// Validation rows in query chunks of at most caps.max_query, each
/// covering its rows once, each paired with min(caps.max_support, |train|)
/// support rows drawn from train with replacement.
std::vector<Episode> build_validation_episodes(const PreparedSet& train, const PreparedSet& val,
                                               const EpisodeCaps& caps, Rng& rng);

/// Row-weighted mean cross-entropy over the query rows of `episodes`.
double validation_loss(const ModelParams<float>& params, std::span<const Episode> episodes);

struct FinetuneReport {
  /// train_loss[i] is the loss of gradient step i + 1.
  std::vector<double> train_loss;
  /// val_loss[0] is the pre-update baseline, val_loss[i] follows step i.
  std::vector<double> val_loss;
  std::int64_t best_step = 0;
  double best_val_loss = 0.0;
  bool fallback = false;

  std::string to_json() const;
};

struct FinetuneResult {
  ModelParams<float> params;
  FinetuneReport report;
  PreprocessState state;
};

/// Fits preprocessing on train, then gradient steps with validation after
/// each; returns the parameters with the lowest validation loss, which are
/// the inputs when no step improved on the baseline.
FinetuneResult finetune(const ModelParams<float>& params, const RawDataset& train, const RawDataset& val,
                        const FinetuneConfig& config);

/// Class probabilities [rows, n_classes] for the rows of `test`: support is
/// all of train when it fits, else a uniform subsample without replacement;
/// test rows go through in query chunks of at most caps.max_query.
Tensor<float> zero_shot_predict(const ModelParams<float>& params, const PreparedSet& train, const Matrix& test,
                                const EpisodeCaps& caps, Rng& rng);

/// Raw-data convenience: fits preprocessing on train and applies it to test.
Tensor<float> zero_shot_predict(const ModelParams<float>& params, const RawDataset& train, const Matrix& test,
                                const EpisodeCaps& caps, Rng& rng);

/// Argmax per row.
std::vector<int> argmax_rows(const Tensor<float>& probs);

double accuracy(std::span<const int> predicted, std::span<const int> truth);

}  // namespace treeprior
