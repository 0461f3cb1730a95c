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

#include "treeprior/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace treeprior {

namespace {

// Stream indices under the run seed.
constexpr std::uint64_t kEpisodeStream = 0;
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kValidationStream = 2;

// Runs fn(i) for i in [0, n) on up to `threads` workers. Work items must
// write to disjoint outputs.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      (void)t;
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

Matrix rows_of(const Matrix& X, std::span<const std::size_t> idx) { return X.select_rows(idx); }

std::vector<int> labels_of(std::span<const int> y, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(y[i]);
  return out;
}

// Query cross-entropy of one episode and, when `grads` is given, its
// gradient written there.
double episode_loss(const ModelParams<float>& params, const Episode& ep, std::vector<Tensor<float>>* grads) {
  if (!ep.y_query) throw std::invalid_argument("episode has no query labels");
  if (!grads) {
    const auto vars = constant_params(params);
    const auto logits = forward_logits<float>(vars, params.config, ep);
    return ad::softmax_cross_entropy(logits, std::span<const int>(*ep.y_query)).value()[0];
  }
  ad::Tape<float> tape;
  const auto vars = leaf_params(params, tape);
  const auto logits = forward_logits<float>(vars, params.config, ep);
  const auto loss = ad::softmax_cross_entropy(logits, std::span<const int>(*ep.y_query));
  tape.backward(loss);
  grads->clear();
  for (const auto& v : vars) grads->push_back(v.grad().empty() ? Tensor<float>(v.shape()) : v.grad());
  return loss.value()[0];
}

void require_finite(double loss, const char* where, std::int64_t step) {
  if (!std::isfinite(loss)) {
    throw NonFiniteError(std::string(where) + ": non-finite loss at step " + std::to_string(step));
  }
}

}  // namespace

std::string LogRecord::to_json() const {
  nlohmann::json j;
  j["step"] = step;
  j["train_loss"] = train_loss;
  j["val_loss"] = val_loss ? nlohmann::json(*val_loss) : nlohmann::json(nullptr);
  j["lr"] = lr;
  return j.dump();
}

PretrainConfig PretrainConfig::desk() {
  // At width 64 and batch 32, 1e-4 stays at chance loss for thousands of
  // steps; 1e-3 learns within a few hundred.
  PretrainConfig c;
  c.lr = 1e-3;
  return c;
}

PretrainConfig PretrainConfig::reference() {
  PretrainConfig c;
  c.steps = 50000;
  c.batch_size = 512;
  return c;
}

void PretrainConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("PretrainConfig: steps must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("PretrainConfig: batch_size must be positive");
  if (!(lr > 0) || !(grad_clip > 0)) throw std::invalid_argument("PretrainConfig: lr and grad_clip must be positive");
  if (caps.max_support == 0 || caps.max_query == 0) throw std::invalid_argument("PretrainConfig: caps must be positive");
  if (max_episode_retries < 1) throw std::invalid_argument("PretrainConfig: max_episode_retries must be >= 1");
  if (log_every < 0) throw std::invalid_argument("PretrainConfig: log_every must be >= 0");
  source.policy.validate();
  source.forest.validate();
  source.neural.validate();
}

void FinetuneConfig::validate() const {
  if (!(lr > 0) || !(grad_clip > 0)) throw std::invalid_argument("FinetuneConfig: lr and grad_clip must be positive");
  if (batch_size == 0) throw std::invalid_argument("FinetuneConfig: batch_size must be positive");
  if (max_steps < 0 || patience < 1) throw std::invalid_argument("FinetuneConfig: need max_steps >= 0, patience >= 1");
  if (caps.max_support == 0 || caps.max_query == 0) throw std::invalid_argument("FinetuneConfig: caps must be positive");
}

PreparedTask prepare_task(const RawDataset& train) {
  PreparedTask t;
  t.state = fit_preprocess(train.X, train.y, train.n_classes);
  t.train = {apply_preprocess(t.state, train.X), train.y, train.n_classes};
  return t;
}

PreparedSet prepare_split(const PreprocessState& state, const RawDataset& split, int n_classes) {
  for (int label : split.y) {
    if (label < 0 || label >= n_classes) throw std::invalid_argument("prepare_split: label outside the training classes");
  }
  return {apply_preprocess(state, split.X), split.y, n_classes};
}

Episode make_pretrain_episode(const RawDataset& ds, const EpisodeCaps& caps, Rng& rng) {
  const std::size_t n = ds.size();
  if (n < 2) throw DegenerateDatasetError("make_pretrain_episode: need at least 2 rows");
  const std::size_t n_query = std::min(caps.max_query, n / 2);
  const std::size_t n_support = std::min(caps.max_support, n - n_query);
  const auto perm = random_permutation(n, rng);
  const std::span<const std::size_t> sup(perm.data(), n_support);
  const std::span<const std::size_t> qry(perm.data() + n_support, n_query);

  const Matrix Xs = rows_of(ds.X, sup);
  std::vector<int> ys = labels_of(ds.y, sup);
  if (count_realized_classes(ys, ds.n_classes) < 2) throw DegenerateDatasetError("make_pretrain_episode: one-class support");
  PreprocessState st;
  try {
    st = fit_preprocess(Xs, ys, ds.n_classes);
  } catch (const std::invalid_argument& e) {
    throw DegenerateDatasetError(e.what());
  }
  Episode ep;
  ep.n_classes = ds.n_classes;
  ep.X_support = apply_preprocess(st, Xs);
  ep.y_support = std::move(ys);
  ep.X_query = apply_preprocess(st, rows_of(ds.X, qry));
  ep.y_query = labels_of(ds.y, qry);
  return shuffle_augment(ep, rng);
}

Episode synthetic_episode(const EpisodeSourceConfig& source, const EpisodeCaps& caps, const Rng& rng, int max_retries) {
  for (int retry = 0; retry < max_retries; ++retry) {
    const Rng r = rng.derive(static_cast<std::uint64_t>(retry));
    try {
      const SampledDataset s = sample_episode(source, r.derive(0));
      Rng split = r.derive(1);
      return make_pretrain_episode(s.dataset, caps, split);
    } catch (const DegenerateDatasetError&) {
    }
  }
  throw DegenerateDatasetError("synthetic_episode: no usable episode after " + std::to_string(max_retries) + " draws");
}

BatchGradient batch_gradient(const ModelParams<float>& params, std::span<const Episode> episodes, std::size_t threads) {
  if (episodes.empty()) throw std::invalid_argument("batch_gradient: empty batch");
  std::vector<std::vector<Tensor<float>>> per(episodes.size());
  std::vector<double> losses(episodes.size());
  parallel_for(episodes.size(), threads, [&](std::size_t i) { losses[i] = episode_loss(params, episodes[i], &per[i]); });
  // Reduce in episode order so the result does not depend on scheduling.
  BatchGradient out;
  out.grads = std::move(per[0]);
  for (std::size_t i = 1; i < per.size(); ++i) {
    for (std::size_t t = 0; t < out.grads.size(); ++t) {
      float* dst = out.grads[t].data();
      const float* src = per[i][t].data();
      for (std::size_t j = 0; j < out.grads[t].size(); ++j) dst[j] += src[j];
    }
  }
  const float inv = 1.0f / static_cast<float>(episodes.size());
  for (auto& g : out.grads)
    for (float& v : g.storage()) v *= inv;
  for (double l : losses) out.loss += l;
  out.loss /= static_cast<double>(episodes.size());
  return out;
}

PretrainResult pretrain(const ModelConfig& model, const PretrainConfig& config, const LogSink& sink) {
  Rng init_rng(config.seed, kInitStream);
  return pretrain_from(init_params<float>(model, init_rng), config, sink);
}

PretrainResult pretrain_from(ModelParams<float> init, const PretrainConfig& config, const LogSink& sink) {
  config.validate();
  PretrainResult result;
  result.params = std::move(init);
  if (config.steps == 0) return result;

  const Rng episode_root(config.seed, kEpisodeStream);
  const Rng val_root(config.seed, kValidationStream);
  std::vector<Episode> val_episodes;
  if (config.log_every > 0) {
    for (std::size_t i = 0; i < config.n_val_episodes; ++i) {
      val_episodes.push_back(synthetic_episode(config.source, config.caps, val_root.derive(i), config.max_episode_retries));
    }
  }

  OptimizerState<float> opt(result.params.tensors, config.optimizer);
  std::vector<Episode> batch(config.batch_size);
  double window = 0.0;
  std::int64_t window_count = 0;
  for (std::int64_t step = 0; step < config.steps; ++step) {
    const Rng step_rng = episode_root.derive(static_cast<std::uint64_t>(step));
    parallel_for(batch.size(), config.threads, [&](std::size_t b) {
      batch[b] = synthetic_episode(config.source, config.caps, step_rng.derive(b), config.max_episode_retries);
    });
    BatchGradient g = batch_gradient(result.params, batch, config.threads);
    require_finite(g.loss, "pretrain", step);
    clip_global_norm(std::span<Tensor<float>>(g.grads), config.grad_clip);
    const double lr = cosine_lr(step, config.steps, config.lr);
    adamw_step(std::span<Tensor<float>>(result.params.tensors), std::span<const Tensor<float>>(g.grads), opt, lr);
    result.step_losses.push_back(g.loss);
    window += g.loss;
    ++window_count;

    const bool last = step + 1 == config.steps;
    if (config.log_every > 0 && ((step + 1) % config.log_every == 0 || last)) {
      LogRecord rec;
      rec.step = step + 1;
      rec.train_loss = window / static_cast<double>(window_count);
      if (!val_episodes.empty()) rec.val_loss = validation_loss(result.params, val_episodes);
      rec.lr = lr;
      result.log.push_back(rec);
      if (sink) sink(rec);
      window = 0.0;
      window_count = 0;
    }
  }
  return result;
}

Episode draw_finetune_episode(const PreparedSet& train, Rng& rng, const EpisodeCaps& caps) {
  const std::size_t n = train.size();
  if (n < 2) throw std::invalid_argument("draw_finetune_episode: need at least 2 training rows");
  const std::size_t n_query = std::max<std::size_t>(1, n / 5);
  const std::size_t n_support = n - n_query;
  const auto perm = random_permutation(n, rng);
  std::vector<std::size_t> sup(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_support));
  std::vector<std::size_t> qry(perm.begin() + static_cast<std::ptrdiff_t>(n_support), perm.end());
  // The permutation is uniform, so truncation is a uniform subsample.
  if (sup.size() > caps.max_support) sup.resize(caps.max_support);
  if (qry.size() > caps.max_query) qry.resize(caps.max_query);
  Episode ep;
  ep.n_classes = train.n_classes;
  ep.X_support = rows_of(train.X, sup);
  ep.y_support = labels_of(train.y, sup);
  ep.X_query = rows_of(train.X, qry);
  ep.y_query = labels_of(train.y, qry);
  return ep;
}

std::vector<Episode> build_validation_episodes(const PreparedSet& train, const PreparedSet& val, const EpisodeCaps& caps,
                                               Rng& rng) {
  if (val.size() == 0) throw std::invalid_argument("build_validation_episodes: empty validation set");
  if (train.size() == 0) throw std::invalid_argument("build_validation_episodes: empty training set");
  const std::size_t n_support = std::min(caps.max_support, train.size());
  std::vector<Episode> out;
  for (std::size_t begin = 0; begin < val.size(); begin += caps.max_query) {
    const std::size_t end = std::min(val.size(), begin + caps.max_query);
    std::vector<std::size_t> sup(n_support), qry;
    for (auto& i : sup) i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(train.size()) - 1));
    for (std::size_t i = begin; i < end; ++i) qry.push_back(i);
    Episode ep;
    ep.n_classes = train.n_classes;
    ep.X_support = rows_of(train.X, sup);
    ep.y_support = labels_of(train.y, sup);
    ep.X_query = rows_of(val.X, qry);
    ep.y_query = labels_of(val.y, qry);
    out.push_back(std::move(ep));
  }
  return out;
}

double validation_loss(const ModelParams<float>& params, std::span<const Episode> episodes) {
  double total = 0.0;
  std::size_t rows = 0;
  for (const auto& ep : episodes) {
    total += episode_loss(params, ep, nullptr) * static_cast<double>(ep.n_query());
    rows += ep.n_query();
  }
  if (rows == 0) throw std::invalid_argument("validation_loss: no query rows");
  return total / static_cast<double>(rows);
}

std::string FinetuneReport::to_json() const {
  nlohmann::json j;
  j["train_loss"] = train_loss;
  j["val_loss"] = val_loss;
  j["best_step"] = best_step;
  j["best_val_loss"] = best_val_loss;
  j["fallback"] = fallback;
  return j.dump();
}

FinetuneResult finetune(const ModelParams<float>& params, const RawDataset& train, const RawDataset& val,
                        const FinetuneConfig& config) {
  config.validate();
  PreparedTask task = prepare_task(train);
  const PreparedSet val_set = prepare_split(task.state, val, train.n_classes);
  const Rng root(config.seed);
  Rng val_rng = root.derive(0);
  const auto val_episodes = build_validation_episodes(task.train, val_set, config.caps, val_rng);
  Rng step_rng = root.derive(1);

  FinetuneResult result;
  result.state = task.state;
  ModelParams<float> current = params;
  FinetuneReport& rep = result.report;
  rep.val_loss.push_back(validation_loss(current, val_episodes));
  require_finite(rep.val_loss[0], "finetune", 0);
  rep.best_val_loss = rep.val_loss[0];
  rep.best_step = 0;
  ModelParams<float> best = params;

  OptimizerState<float> opt(current.tensors, config.optimizer);
  for (std::int64_t step = 1; step <= config.max_steps; ++step) {
    std::vector<Episode> batch;
    for (std::size_t b = 0; b < config.batch_size; ++b) batch.push_back(draw_finetune_episode(task.train, step_rng, config.caps));
    BatchGradient g = batch_gradient(current, batch);
    require_finite(g.loss, "finetune", step);
    clip_global_norm(std::span<Tensor<float>>(g.grads), config.grad_clip);
    adamw_step(std::span<Tensor<float>>(current.tensors), std::span<const Tensor<float>>(g.grads), opt, config.lr);
    rep.train_loss.push_back(g.loss);

    const double v = validation_loss(current, val_episodes);
    require_finite(v, "finetune", step);
    rep.val_loss.push_back(v);
    if (v < rep.best_val_loss) {
      rep.best_val_loss = v;
      rep.best_step = step;
      best = current;
    } else if (config.early_stop && step - rep.best_step >= config.patience) {
      break;
    }
  }
  rep.fallback = rep.best_step == 0;
  result.params = std::move(best);
  return result;
}

Tensor<float> zero_shot_predict(const ModelParams<float>& params, const PreparedSet& train, const Matrix& test,
                                const EpisodeCaps& caps, Rng& rng) {
  if (train.size() == 0) throw std::invalid_argument("zero_shot_predict: empty training set");
  if (test.cols() != kModelFeatures) throw ShapeError("zero_shot_predict: test rows must be preprocessed");
  std::vector<std::size_t> sup;
  if (train.size() <= caps.max_support) {
    sup.resize(train.size());
    for (std::size_t i = 0; i < sup.size(); ++i) sup[i] = i;
  } else {
    sup = sample_without_replacement(train.size(), caps.max_support, rng);
  }
  Episode ep;
  ep.n_classes = train.n_classes;
  ep.X_support = rows_of(train.X, sup);
  ep.y_support = labels_of(train.y, sup);

  const auto c = static_cast<std::size_t>(train.n_classes);
  Tensor<float> out({test.rows(), c});
  const auto vars = constant_params(params);
  for (std::size_t begin = 0; begin < test.rows(); begin += caps.max_query) {
    const std::size_t end = std::min(test.rows(), begin + caps.max_query);
    std::vector<std::size_t> qry;
    for (std::size_t i = begin; i < end; ++i) qry.push_back(i);
    ep.X_query = rows_of(test, qry);
    const auto probs = predict_proba(forward_logits<float>(vars, params.config, ep).value(), train.n_classes);
    std::copy(probs.data(), probs.data() + probs.size(), out.data() + begin * c);
  }
  return out;
}

Tensor<float> zero_shot_predict(const ModelParams<float>& params, const RawDataset& train, const Matrix& test,
                                const EpisodeCaps& caps, Rng& rng) {
  const PreparedTask task = prepare_task(train);
  return zero_shot_predict(params, task.train, apply_preprocess(task.state, test), caps, rng);
}

std::vector<int> argmax_rows(const Tensor<float>& probs) {
  std::vector<int> out(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const float* row = probs.data() + i * probs.cols();
    out[i] = static_cast<int>(std::max_element(row, row + probs.cols()) - row);
  }
  return out;
}

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size() || truth.empty()) throw std::invalid_argument("accuracy: size mismatch or empty");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

}  // namespace treeprior
