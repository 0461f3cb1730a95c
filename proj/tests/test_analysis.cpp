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

#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "treeprior/analysis.hpp"
#include "treeprior/forest_generator.hpp"

using namespace treeprior;

namespace {

ProbabilityGrid grid_from(const std::vector<std::vector<double>>& rows) {
  ProbabilityGrid g;
  g.res_x = rows.size();
  g.res_y = rows[0].size();
  for (const auto& r : rows) g.p.insert(g.p.end(), r.begin(), r.end());
  return g;
}

std::vector<std::vector<double>> random_grid(std::size_t rx, std::size_t ry, Rng& rng) {
  std::vector<std::vector<double>> p(rx, std::vector<double>(ry));
  for (auto& r : p)
    for (auto& v : r) v = rng.uniform();
  return p;
}

}  // namespace

TEST_CASE("complexity score examples") {
  CHECK(complexity_score(grid_from({{0, 1}, {1, 0}})) == 2.0);
  CHECK(complexity_score(grid_from({{0.3, 0.3, 0.3}, {0.3, 0.3, 0.3}})) == 0.0);
  CHECK(complexity_score(grid_from({{0, 1}})) == 1.0);
  CHECK_THROWS(complexity_score(ProbabilityGrid{}));
}

TEST_CASE("complexity score against the direct loop and its invariances") {
  Rng rng(71);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rx = 1 + static_cast<std::size_t>(rng.uniform_int(0, 30));
    const std::size_t ry = 1 + static_cast<std::size_t>(rng.uniform_int(0, 30));
    const auto p = random_grid(rx, ry, rng);
    const double v = complexity_score(grid_from(p));
    CHECK(std::abs(v - oracle::complexity(p)) <= 1e-12 * std::max(1.0, v));

    std::vector<std::vector<double>> t(ry, std::vector<double>(rx)), flip = p, half = p;
    for (std::size_t i = 0; i < rx; ++i)
      for (std::size_t j = 0; j < ry; ++j) {
        t[j][i] = p[i][j];
        flip[i][j] = 1 - p[i][j];
        half[i][j] = 0.5 * p[i][j];
      }
    CHECK(complexity_score(grid_from(t)) == doctest::Approx(v).epsilon(1e-12));
    CHECK(complexity_score(grid_from(flip)) == doctest::Approx(v).epsilon(1e-12));
    CHECK(complexity_score(grid_from(half)) == doctest::Approx(0.5 * v).epsilon(1e-12));
  }
}

TEST_CASE("boundary grid") {
  ForestGenConfig c;
  c.dataset_size = 120;
  c.base_size = 256;
  c.n_features = 3;
  c.tree_depth = 2;
  const auto train = generate_forest_dataset(c, Rng(72));
  const auto test = generate_forest_dataset(c, Rng(73));
  Rng init(74);
  const auto params = init_params<float>(ModelConfig::desk(), init);
  Rng rng(75);
  const auto g = boundary_grid(params, train, test.X, 0, 2, 6, 4, {}, rng);
  CHECK(g.res_x == 6);
  CHECK(g.res_y == 4);
  CHECK(g.p.size() == 24);
  for (double v : g.p) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  const auto col = test.X.column(0);
  CHECK(g.x_min == *std::min_element(col.begin(), col.end()));
  CHECK(g.x_max == *std::max_element(col.begin(), col.end()));
  CHECK(g.cell_x(0) >= g.x_min);
  CHECK(g.cell_x(5) <= g.x_max);
  const auto csv = grid_to_csv(g);
  CHECK(csv.rfind("i,j,x,y,p\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 25);
  const auto pgm = grid_to_pgm(g);
  CHECK(pgm.rfind("P5", 0) == 0);
  CHECK(pgm.size() >= 24);
  CHECK_THROWS(boundary_grid(params, train, test.X, 1, 1, 6, 4, {}, rng));
  const auto single = boundary_grid(params, train, test.X, 0, 1, 1, 1, {}, rng);
  REQUIRE(single.p.size() == 1);
  CHECK(single.p[0] >= 0.0);
  CHECK(single.p[0] <= 1.0);
  CHECK(complexity_score(single) == 0.0);
}

TEST_CASE("normalized accuracy and ranks") {
  MethodResults r;
  r.methods = {"a", "b", "c"};
  r.datasets = {"d1", "d2"};
  r.accuracy = {{0.5, 0.7, 0.9}, {0.8, 0.8, 0.6}};
  const auto n = normalized_accuracy(r);
  CHECK(n[0][0] == 0.0);
  CHECK(n[0][1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(n[0][2] == 1.0);
  CHECK(n[1] == std::vector<double>{1.0, 1.0, 0.0});
  const auto k = ranks(r);
  CHECK(k[0] == std::vector<double>{3, 2, 1});
  CHECK(k[1] == std::vector<double>{1.5, 1.5, 3});

  MethodResults tie = r;
  tie.accuracy = {{0.4, 0.4, 0.4}};
  tie.datasets = {"d"};
  CHECK(normalized_accuracy(tie)[0] == std::vector<double>{1, 1, 1});
  CHECK(ranks(tie)[0] == std::vector<double>{2, 2, 2});

  const auto s = summarize({3, 1, 2, 10});
  CHECK(s.min == 1);
  CHECK(s.max == 10);
  CHECK(s.mean == 4);
  CHECK(s.median == 2.5);

  const auto table = rank_table(r);
  REQUIRE(table.size() == 3);
  CHECK(table[2].method == "c");
  CHECK(table[2].rank.mean == 2.0);
  CHECK(table[0].normalized_accuracy.mean == doctest::Approx(0.5).epsilon(1e-12));

  const auto parsed = results_from_json(
      R"({"methods":["a","b","c"],"datasets":[{"name":"d1","accuracy":{"a":0.5,"b":0.7,"c":0.9}},)"
      R"({"name":"d2","accuracy":{"a":0.8,"b":0.8,"c":0.6}}]})");
  CHECK(parsed.accuracy == r.accuracy);
  CHECK(parsed.datasets == r.datasets);
  CHECK(summary_to_json(table).find("\"rank\"") != std::string::npos);
  CHECK(summary_to_text(table).find("c") != std::string::npos);

  // A method that is the per-dataset minimum everywhere scores exactly 0.
  MethodResults floor = r;
  floor.methods = {"scratch", "a", "b"};
  floor.accuracy = {{0.28, 0.71, 0.85}, {0.19, 0.64, 0.52}, {0.5, 0.9, 0.9}};
  floor.datasets = {"p", "q", "r"};
  const auto ft = rank_table(floor);
  CHECK(ft[0].normalized_accuracy.mean == 0.0);
  CHECK(ft[0].normalized_accuracy.max == 0.0);
  MethodResults two = r;
  two.methods = {"a", "b"};
  two.accuracy = {{0.9, 0.3}, {0.6, 0.5}};
  const auto tt = rank_table(two);
  CHECK(tt[0].normalized_accuracy.min == 1.0);
  CHECK(tt[0].normalized_accuracy.mean == 1.0);
  CHECK(tt[0].rank.mean == 1.0);

  MethodResults one = r;
  one.methods = {"a"};
  one.accuracy = {{0.5}, {0.6}};
  CHECK_THROWS(normalized_accuracy(one));
}
