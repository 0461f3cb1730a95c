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
#include <bit>
#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "treeprior/forest_generator.hpp"
#include "treeprior/mixed_generator.hpp"

using namespace treeprior;

namespace {

constexpr int GOLDEN_DEPTH = 5;
constexpr std::uint64_t GOLDEN_FINGERPRINT = 0x39e218812d880e1bULL;

std::uint64_t fingerprint(const RawDataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xFF;
      h *= 0x100000001b3ULL;
    }
  };
  feed(ds.X.rows());
  feed(ds.X.cols());
  for (double v : ds.X.data()) feed(std::bit_cast<std::uint64_t>(v));
  for (int y : ds.y) feed(static_cast<std::uint64_t>(y));
  for (bool m : ds.categorical_mask) feed(m);
  return h;
}

// Kolmogorov-Smirnov statistic against the standard normal.
double ks_normal(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double d = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double cdf = 0.5 * std::erfc(-v[i] / std::sqrt(2.0));
    d = std::max({d, cdf - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - cdf});
  }
  return d;
}

ForestGenBounds small_bounds() {
  ForestGenBounds b;
  b.base_size = {256, 256};
  b.dataset_size = {128, 128};
  b.n_features = {3, 3};
  b.tree_depth = {1, 3};
  return b;
}

}  // namespace

TEST_CASE("sample_config respects bounds and seeds") {
  ForestGenBounds b;
  b.tree_depth = {7, 7};
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto c = sample_config(b, rng);
    CHECK(c.tree_depth == 7);
    CHECK(c.base_size == 1024);
    CHECK(c.n_features >= 3);
    CHECK(c.n_features <= 100);
    CHECK(c.categorical_ratio >= 0.0);
    CHECK(c.categorical_ratio <= 1.0);
  }
  Rng a(5, 3), a2(5, 3);
  CHECK(sample_config(ForestGenBounds{}, a, 5, 3) == sample_config(ForestGenBounds{}, a2, 5, 3));
  ForestGenBounds bad;
  bad.tree_depth = {5, 4};
  CHECK_THROWS(bad.validate());
}

TEST_CASE("tree depth draws are uniform") {
  Rng rng(2);
  std::map<int, int> counts;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++counts[sample_config(ForestGenBounds{}, rng).tree_depth];
  CHECK(counts.size() == 25);
  const double p = 1.0 / 25, mean = draws * p, sd = std::sqrt(draws * p * (1 - p));
  for (auto [depth, c] : counts) CHECK_MESSAGE(std::abs(c - mean) < 5 * sd, "depth ", depth, " count ", c);
}

TEST_CASE("quantile_to_uniform") {
  const auto u = quantile_to_uniform(std::vector<double>{3, 1, 2});
  CHECK(u[0] == doctest::Approx(5.0 / 6));
  CHECK(u[1] == doctest::Approx(1.0 / 6));
  CHECK(u[2] == doctest::Approx(0.5));
  for (double x : quantile_to_uniform(std::vector<double>(7, 4.2))) CHECK(x == 0.5);
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(50);
    // Rounding forces ties in some trials.
    for (auto& x : v) x = trial % 2 ? std::round(rng.normal() * 2) : rng.normal();
    CHECK(quantile_to_uniform(v) == oracle::midrank_uniform(v));
  }
}

TEST_CASE("bucketize examples") {
  CHECK(bucketize(std::vector<double>{0.2, 0.7}, std::vector<double>{0.5}) == std::vector<int>{0, 1});
  CHECK(bucketize(std::vector<double>{0.1, 0.5, 0.9}, std::vector<double>{0.3, 0.7}) == std::vector<int>{0, 1, 2});
}

TEST_CASE("discretize_targets produces imbalanced classes") {
  Rng rng(4);
  std::vector<double> u(1000);
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = (static_cast<double>(i) + 0.5) / 1000.0;
  // Bucket masses of random boundaries vary far more than equal-width buckets.
  double var_sum = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    const auto labels = discretize_targets(u, 4, rng);
    std::vector<double> mass(4, 0);
    for (int l : labels) {
      REQUIRE(l >= 0);
      REQUIRE(l < 4);
      mass[static_cast<std::size_t>(l)] += 1.0 / 1000;
    }
    CHECK(count_realized_classes(labels, 4) >= 2);
    for (double m : mass) var_sum += (m - 0.25) * (m - 0.25);
  }
  CHECK(var_sum / (trials * 4) > 0.01);
  CHECK_THROWS_AS(discretize_targets(std::vector<double>(10, 0.5), 2, rng), DegenerateDatasetError);
}

TEST_CASE("convert_to_categorical") {
  Rng rng(5);
  Matrix X(200, 6);
  for (auto& v : X.data()) v = rng.normal();
  const Matrix original = X;
  Matrix same = X;
  const auto none = convert_to_categorical(same, 0.0, rng);
  CHECK(same == original);
  CHECK(std::none_of(none.begin(), none.end(), [](bool b) { return b; }));

  Matrix bin = X;
  const auto all = convert_to_categorical(bin, 1.0, rng, 2, 2);
  CHECK(std::all_of(all.begin(), all.end(), [](bool b) { return b; }));
  for (double v : bin.data()) CHECK((v == 0.0 || v == 1.0));

  Matrix some = X;
  const auto mask = convert_to_categorical(some, 0.5, rng);
  CHECK(std::count(mask.begin(), mask.end(), true) == 3);
  for (std::size_t c = 0; c < 6; ++c) {
    const auto col = some.column(c), orig = original.column(c);
    if (!mask[c]) {
      CHECK(col == orig);
      continue;
    }
    CHECK(std::set<double>(col.begin(), col.end()).size() <= 10);
    for (std::size_t i = 0; i < col.size(); ++i)
      for (std::size_t j = 0; j < col.size(); ++j)
        if (orig[i] < orig[j]) CHECK(col[i] <= col[j]);
  }
}

TEST_CASE("forest dataset invariants") {
  Rng cfg_rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    ForestGenBounds b;
    b.n_features = {3, 12};
    const auto cfg = sample_config(b, cfg_rng, 6, static_cast<std::uint64_t>(trial));
    const auto s = generate_forest_sample(cfg, Rng(6, static_cast<std::uint64_t>(trial)));
    CHECK_NOTHROW(validate_dataset(s.dataset));
    CHECK(s.dataset.size() == static_cast<std::size_t>(cfg.dataset_size));
    CHECK(s.dataset.X.cols() == static_cast<std::size_t>(cfg.n_features));
    const std::set<double> distinct(s.raw_targets.begin(), s.raw_targets.end());
    CHECK(distinct.size() <= (std::size_t{1} << std::min(cfg.tree_depth, 30)));
  }
  ForestGenConfig c;
  c.tree_depth = 1;
  c.n_classes = 2;
  const auto s = generate_forest_sample(c, Rng(9));
  CHECK(std::set<double>(s.raw_targets.begin(), s.raw_targets.end()).size() <= 2);
  for (int y : s.dataset.y) CHECK((y == 0 || y == 1));
}

TEST_CASE("forest generation is deterministic and matches the frozen snapshot") {
  Rng cfg_rng(7, 0);
  const auto cfg = sample_config(ForestGenBounds{}, cfg_rng, 7, 0);
  const auto a = generate_forest_dataset(cfg, Rng(7, 0));
  const auto b = generate_forest_dataset(cfg, Rng(7, 0));
  CHECK(a == b);
  // Frozen from the first run of this implementation.
  CHECK(cfg.tree_depth == GOLDEN_DEPTH);
  CHECK(fingerprint(a) == GOLDEN_FINGERPRINT);
}

TEST_CASE("continuous generated features are standard normal") {
  ForestGenConfig c;
  c.dataset_size = 1024;
  c.n_features = 5;
  c.tree_depth = 4;
  c.categorical_ratio = 0.0;
  const auto ds = generate_forest_dataset(c, Rng(10));
  // Critical value of the one-sample KS test at alpha = 0.001.
  const double crit = 1.949 / std::sqrt(1024.0);
  for (std::size_t col = 0; col < 5; ++col) CHECK(ks_normal(ds.X.column(col)) < crit);
}

TEST_CASE("deeper trees give more distinct raw targets") {
  std::vector<double> mean_distinct;
  for (int depth : {1, 5, 9, 25}) {
    double total = 0;
    for (int s = 0; s < 200; ++s) {
      ForestGenConfig c;
      c.tree_depth = depth;
      c.n_features = 3;
      c.dataset_size = 256;
      const auto sample = generate_forest_sample(c, Rng(11, static_cast<std::uint64_t>(s)));
      total += static_cast<double>(std::set<double>(sample.raw_targets.begin(), sample.raw_targets.end()).size());
    }
    mean_distinct.push_back(total / 200);
  }
  for (std::size_t i = 1; i < mean_distinct.size(); ++i) CHECK(mean_distinct[i] >= mean_distinct[i - 1]);
}

TEST_CASE("class balance rejection") {
  GenerationLimits limits;
  limits.class_balance_tolerance = 0.1;
  limits.max_attempts = 64;
  for (int s = 0; s < 20; ++s) {
    ForestGenConfig c;
    c.tree_depth = 3;
    c.n_features = 2;
    c.dataset_size = 256;
    const auto ds = generate_forest_dataset(c, Rng(12, static_cast<std::uint64_t>(s)), limits);
    const auto ones = std::count(ds.y.begin(), ds.y.end(), 1);
    CHECK(std::abs(static_cast<double>(ones) / 256 - 0.5) <= 0.1);
  }
}

TEST_CASE("neural generator") {
  NeuralGenConfig c;
  c.n_features = 4;
  c.n_classes = 3;
  c.dataset_size = 300;
  c.hidden_layers = 2;
  c.hidden_width = 8;
  c.noise_scale = 0.1;
  const auto a = generate_neural_dataset(c, Rng(13));
  CHECK(a == generate_neural_dataset(c, Rng(13)));
  CHECK_NOTHROW(validate_dataset(a));
  CHECK(a.size() == 300);

  // One hidden unit and no noise: the label is a monotone function of one
  // linear projection, so two classes are linearly separable. A perceptron
  // must reach zero training errors.
  NeuralGenConfig lin;
  lin.n_features = 3;
  lin.n_classes = 2;
  lin.dataset_size = 200;
  lin.hidden_layers = 1;
  lin.hidden_width = 1;
  lin.noise_scale = 0.0;
  const auto ds = generate_neural_dataset(lin, Rng(14));
  std::vector<double> w(4, 0.0);
  std::size_t errors = 1;
  for (int epoch = 0; epoch < 20000 && errors > 0; ++epoch) {
    errors = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const double t = ds.y[i] == 1 ? 1.0 : -1.0;
      double s = w[3];
      for (std::size_t j = 0; j < 3; ++j) s += w[j] * ds.X(i, j);
      if (t * s <= 0) {
        ++errors;
        for (std::size_t j = 0; j < 3; ++j) w[j] += t * ds.X(i, j);
        w[3] += t;
      }
    }
  }
  CHECK(errors == 0);
}

TEST_CASE("mixing policy") {
  EpisodeSourceConfig src;
  src.forest = small_bounds();
  src.neural.dataset_size = {128, 128};
  src.neural.n_features = {3, 3};
  src.neural.hidden_layers = {1, 1};
  src.neural.hidden_width = {4, 4};
  for (double p : {0.0, 1.0}) {
    src.policy.p_forest = p;
    for (int i = 0; i < 50; ++i) {
      const auto s = sample_episode(src, Rng(15, static_cast<std::uint64_t>(i)));
      CHECK(s.kind == (p == 1.0 ? GeneratorKind::kForest : GeneratorKind::kNeural));
    }
  }
  src.policy.p_forest = 0.5;
  const int draws = 10000;
  int forest = 0;
  for (int i = 0; i < draws; ++i) forest += sample_episode(src, Rng(16, static_cast<std::uint64_t>(i))).kind == GeneratorKind::kForest;
  CHECK(std::abs(forest - draws / 2.0) < 5 * std::sqrt(draws * 0.25));
  src.policy.p_forest = 1.5;
  CHECK_THROWS(src.policy.validate());
}
