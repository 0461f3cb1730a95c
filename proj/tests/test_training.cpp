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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "treeprior/forest_generator.hpp"
#include "treeprior/training.hpp"

using namespace treeprior;

namespace {

// Row i carries the marker i in column 0.
PreparedSet marked_set(std::size_t n, int n_classes = 2) {
  PreparedSet s;
  s.X = Matrix(n, kModelFeatures);
  s.n_classes = n_classes;
  for (std::size_t i = 0; i < n; ++i) {
    s.X(i, 0) = static_cast<double>(i);
    s.y.push_back(static_cast<int>(i % static_cast<std::size_t>(n_classes)));
  }
  return s;
}

std::vector<std::size_t> markers(const Matrix& X) {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < X.rows(); ++r) out.push_back(static_cast<std::size_t>(X(r, 0)));
  return out;
}

RawDataset small_task(std::uint64_t seed, int rows = 96) {
  ForestGenConfig c;
  c.dataset_size = rows;
  c.base_size = 256;
  c.n_features = 3;
  c.tree_depth = 3;
  return generate_forest_dataset(c, Rng(seed));
}

ModelParams<float> small_model(std::uint64_t seed) {
  Rng rng(seed);
  return init_params<float>(ModelConfig::desk(), rng);
}

}  // namespace

TEST_CASE("fine-tuning split sizes") {
  Rng rng(51);
  const auto small = marked_set(100);
  const auto ep = draw_finetune_episode(small, rng, FinetuneConfig{}.caps);
  CHECK(ep.n_support() == 80);
  CHECK(ep.n_query() == 20);
  auto rows = markers(ep.X_support);
  const auto q = markers(ep.X_query);
  rows.insert(rows.end(), q.begin(), q.end());
  std::sort(rows.begin(), rows.end());
  std::vector<std::size_t> all(100);
  std::iota(all.begin(), all.end(), std::size_t{0});
  CHECK(rows == all);
  for (std::size_t i = 0; i < ep.n_support(); ++i) CHECK(ep.y_support[i] == static_cast<int>(static_cast<std::size_t>(ep.X_support(i, 0)) % 2));

  const auto big = marked_set(20000);
  const auto eb = draw_finetune_episode(big, rng, EpisodeCaps{8192, 1024});
  CHECK(eb.n_support() == 8192);
  CHECK(eb.n_query() == 1024);
  const auto s = markers(eb.X_support), qq = markers(eb.X_query);
  std::set<std::size_t> seen(s.begin(), s.end());
  CHECK(seen.size() == 8192);
  for (auto m : qq) CHECK(seen.count(m) == 0);

  const auto tiny = marked_set(2);
  const auto et = draw_finetune_episode(tiny, rng, EpisodeCaps{});
  CHECK(et.n_support() == 1);
  CHECK(et.n_query() == 1);
}

TEST_CASE("validation episodes cover every row once") {
  Rng rng(52);
  const auto train = marked_set(3000);
  const auto val_small = marked_set(10);
  const auto one = build_validation_episodes(train, val_small, EpisodeCaps{8192, 1024}, rng);
  REQUIRE(one.size() == 1);
  CHECK(one[0].n_query() == 10);
  CHECK(one[0].n_support() == 3000);

  const auto val = marked_set(2500);
  const auto eps = build_validation_episodes(train, val, EpisodeCaps{1000, 1024}, rng);
  REQUIRE(eps.size() == 3);
  CHECK(eps[0].n_query() == 1024);
  CHECK(eps[1].n_query() == 1024);
  CHECK(eps[2].n_query() == 452);
  std::vector<std::size_t> rows;
  for (const auto& e : eps) {
    CHECK(e.n_support() == 1000);
    const auto m = markers(e.X_query);
    rows.insert(rows.end(), m.begin(), m.end());
    CHECK(*e.y_query == std::vector<int>(val.y.begin() + static_cast<std::ptrdiff_t>(m.front()),
                                         val.y.begin() + static_cast<std::ptrdiff_t>(m.front() + m.size())));
  }
  std::sort(rows.begin(), rows.end());
  std::vector<std::size_t> all(2500);
  std::iota(all.begin(), all.end(), std::size_t{0});
  CHECK(rows == all);
}

TEST_CASE("pretraining episode split") {
  Rng rng(53);
  const auto ds = small_task(53, 300);
  const auto ep = make_pretrain_episode(ds, EpisodeCaps{}, rng);
  CHECK(ep.n_query() == 128);
  CHECK(ep.n_support() == 172);
  CHECK(ep.X_support.cols() == kModelFeatures);
  const auto small = make_pretrain_episode(small_task(54, 100), EpisodeCaps{}, rng);
  CHECK(small.n_query() == 50);
  CHECK(small.n_support() == 50);
  CHECK_NOTHROW(validate_episode(small));
}

TEST_CASE("batch gradient does not depend on the thread count") {
  const auto params = small_model(55);
  std::vector<Episode> eps;
  Rng rng(56);
  for (std::uint64_t i = 0; i < 5; ++i) eps.push_back(make_pretrain_episode(small_task(60 + i), EpisodeCaps{}, rng));
  const auto a = batch_gradient(params, eps, 1);
  const auto b = batch_gradient(params, eps, 3);
  CHECK(a.loss == b.loss);
  REQUIRE(a.grads.size() == b.grads.size());
  for (std::size_t t = 0; t < a.grads.size(); ++t) CHECK(a.grads[t] == b.grads[t]);
}

TEST_CASE("pretraining runs and is reproducible") {
  PretrainConfig cfg;
  cfg.steps = 0;
  const auto init = small_model(57);
  CHECK(pretrain_from(init, cfg).params == init);

  cfg.steps = 3;
  cfg.batch_size = 2;
  cfg.log_every = 1;
  cfg.n_val_episodes = 2;
  cfg.source.policy.p_forest = 1.0;
  cfg.source.forest.dataset_size = {128, 128};
  cfg.source.forest.n_features = {3, 5};
  std::vector<LogRecord> seen;
  const auto a = pretrain(ModelConfig::desk(), cfg, [&](const LogRecord& r) { seen.push_back(r); });
  cfg.threads = 2;
  const auto b = pretrain(ModelConfig::desk(), cfg);
  CHECK(a.params == b.params);
  CHECK(a.step_losses == b.step_losses);
  CHECK(a.step_losses.size() == 3);
  CHECK(seen.size() == a.log.size());
  CHECK(!seen.empty());
  CHECK(seen.back().to_json().find("\"step\"") != std::string::npos);
}

TEST_CASE("fine-tuning returns the best snapshot") {
  const auto params = small_model(58);
  const auto train = small_task(58), val = small_task(59);
  FinetuneConfig cfg;
  cfg.lr = 1e-3;
  cfg.max_steps = 12;
  cfg.seed = 3;
  const auto a = finetune(params, train, val, cfg);
  const auto b = finetune(params, train, val, cfg);
  CHECK(a.params == b.params);
  CHECK(a.report.val_loss == b.report.val_loss);
  const auto& rep = a.report;
  CHECK(rep.best_val_loss <= rep.val_loss[0]);
  CHECK(rep.best_val_loss == *std::min_element(rep.val_loss.begin(), rep.val_loss.end()));
  CHECK(rep.val_loss.size() == rep.train_loss.size() + 1);

  // The returned parameters reproduce the best validation loss.
  const auto task = prepare_task(train);
  const auto vs = prepare_split(task.state, val, train.n_classes);
  Rng vr = Rng(cfg.seed).derive(0);
  const auto veps = build_validation_episodes(task.train, vs, cfg.caps, vr);
  CHECK(validation_loss(a.params, veps) == rep.best_val_loss);

  cfg.early_stop = false;
  const auto full = finetune(params, train, val, cfg);
  CHECK(full.report.val_loss.size() == 13);
}

TEST_CASE("fine-tuning falls back to the input when nothing improves") {
  const auto train = small_task(61, 64);
  FinetuneConfig fit;
  fit.lr = 1e-3;
  fit.max_steps = 150;
  fit.early_stop = false;
  const auto fitted = finetune(small_model(60), train, train, fit).params;

  FinetuneConfig cfg;
  // A step size this large moves a fitted model away from its optimum.
  cfg.lr = 0.5;
  cfg.max_steps = 50;
  cfg.patience = 4;
  const auto r = finetune(fitted, train, train, cfg);
  for (std::size_t i = 1; i < r.report.val_loss.size(); ++i) CHECK(r.report.val_loss[i] > r.report.val_loss[0]);
  CHECK(r.report.fallback);
  CHECK(r.report.best_step == 0);
  CHECK(r.params == fitted);
  CHECK(r.report.train_loss.size() == 4);
  CHECK(r.report.to_json().find("fallback") != std::string::npos);
}

TEST_CASE("fine-tuning can fit a small training set") {
  const auto params = small_model(63);
  const auto train = small_task(64, 64);
  FinetuneConfig cfg;
  cfg.lr = 1e-3;
  cfg.max_steps = 150;
  cfg.early_stop = false;
  const auto r = finetune(params, train, train, cfg);
  CHECK(r.report.best_val_loss < 0.5 * r.report.val_loss[0]);
  Rng rng(1);
  const auto probs = zero_shot_predict(r.params, train, train.X, EpisodeCaps{}, rng);
  CHECK(accuracy(argmax_rows(probs), train.y) >= 0.95);
}

TEST_CASE("zero-shot prediction is chunk invariant") {
  const auto params = small_model(65);
  const auto train = small_task(66, 200), test = small_task(67, 50);
  Rng a(1), b(1);
  const auto p1 = zero_shot_predict(params, train, test.X, EpisodeCaps{1024, 128}, a);
  const auto p2 = zero_shot_predict(params, train, test.X, EpisodeCaps{1024, 7}, b);
  CHECK(p1.shape() == Shape{50, 2});
  CHECK(p1 == p2);
  for (std::size_t r = 0; r < 50; ++r) CHECK(p1(r, 0) + p1(r, 1) == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(argmax_rows(Tensor<float>({2, 3}, std::vector<float>{0.1f, 0.7f, 0.2f, 0.5f, 0.2f, 0.3f})) == std::vector<int>{1, 0});
  CHECK(accuracy(std::vector<int>{1, 0, 1, 1}, std::vector<int>{1, 1, 1, 0}) == 0.5);
}
