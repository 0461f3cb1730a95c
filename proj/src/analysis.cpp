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

#include "treeprior/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace treeprior {

double ProbabilityGrid::cell_x(std::size_t i) const {
  return x_min + (static_cast<double>(i) + 0.5) * (x_max - x_min) / static_cast<double>(res_x);
}

double ProbabilityGrid::cell_y(std::size_t j) const {
  return y_min + (static_cast<double>(j) + 0.5) * (y_max - y_min) / static_cast<double>(res_y);
}

double complexity_score(const ProbabilityGrid& g) {
  if (g.res_x == 0 || g.res_y == 0 || g.p.size() != g.res_x * g.res_y) {
    throw std::invalid_argument("complexity_score: empty or inconsistent grid");
  }
  // Each unordered neighbor pair appears twice in the per-cell sums.
  double total = 0.0;
  for (std::size_t i = 0; i < g.res_x; ++i) {
    for (std::size_t j = 0; j < g.res_y; ++j) {
      if (i + 1 < g.res_x) total += 2.0 * std::abs(g.at(i + 1, j) - g.at(i, j));
      if (j + 1 < g.res_y) total += 2.0 * std::abs(g.at(i, j + 1) - g.at(i, j));
    }
  }
  return total / static_cast<double>(g.p.size());
}

namespace {

double median_ignoring_nan(std::vector<double> v) {
  std::erase_if(v, [](double x) { return std::isnan(x); });
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::pair<double, double> range_ignoring_nan(const std::vector<double>& v) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double x : v) {
    if (std::isnan(x)) continue;
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (!std::isfinite(lo)) throw std::invalid_argument("boundary_grid: feature has no finite test values");
  return {lo, hi};
}

}  // namespace

ProbabilityGrid boundary_grid(const ModelParams<float>& params, const RawDataset& train, const Matrix& test,
                              std::size_t feature_x, std::size_t feature_y, std::size_t res_x, std::size_t res_y,
                              const EpisodeCaps& caps, Rng& rng) {
  if (train.n_classes != 2) throw std::invalid_argument("boundary_grid: task must be binary");
  if (feature_x == feature_y) throw std::invalid_argument("boundary_grid: features must differ");
  if (feature_x >= test.cols() || feature_y >= test.cols()) throw std::invalid_argument("boundary_grid: feature index out of range");
  if (test.cols() != train.X.cols()) throw std::invalid_argument("boundary_grid: train and test widths differ");
  if (res_x == 0 || res_y == 0) throw std::invalid_argument("boundary_grid: resolution must be positive");
  if (test.rows() == 0) throw std::invalid_argument("boundary_grid: empty test set");

  ProbabilityGrid g;
  g.res_x = res_x;
  g.res_y = res_y;
  g.feature_x = feature_x;
  g.feature_y = feature_y;
  std::tie(g.x_min, g.x_max) = range_ignoring_nan(test.column(feature_x));
  std::tie(g.y_min, g.y_max) = range_ignoring_nan(test.column(feature_y));
  g.baseline.resize(test.cols());
  for (std::size_t c = 0; c < test.cols(); ++c) g.baseline[c] = median_ignoring_nan(test.column(c));

  Matrix cells(res_x * res_y, test.cols());
  for (std::size_t i = 0; i < res_x; ++i) {
    for (std::size_t j = 0; j < res_y; ++j) {
      auto row = cells.row(i * res_y + j);
      std::copy(g.baseline.begin(), g.baseline.end(), row.begin());
      row[feature_x] = g.cell_x(i);
      row[feature_y] = g.cell_y(j);
    }
  }
  const Tensor<float> probs = zero_shot_predict(params, train, cells, caps, rng);
  g.p.resize(cells.rows());
  for (std::size_t r = 0; r < cells.rows(); ++r) g.p[r] = static_cast<double>(probs(r, 1));
  return g;
}

std::string grid_to_csv(const ProbabilityGrid& g) {
  std::string out = "i,j,x,y,p\n";
  char buf[160];
  for (std::size_t i = 0; i < g.res_x; ++i) {
    for (std::size_t j = 0; j < g.res_y; ++j) {
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.9g\n", i, j, g.cell_x(i), g.cell_y(j), g.at(i, j));
      out += buf;
    }
  }
  return out;
}

std::string grid_to_pgm(const ProbabilityGrid& g) {
  std::string out = "P5\n" + std::to_string(g.res_x) + " " + std::to_string(g.res_y) + "\n255\n";
  for (std::size_t row = 0; row < g.res_y; ++row) {
    const std::size_t j = g.res_y - 1 - row;
    for (std::size_t i = 0; i < g.res_x; ++i) {
      const double v = std::clamp(g.at(i, j), 0.0, 1.0);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v))));
    }
  }
  return out;
}

void MethodResults::validate() const {
  if (methods.empty() || datasets.empty()) throw std::invalid_argument("MethodResults: empty results");
  if (accuracy.size() != datasets.size()) throw std::invalid_argument("MethodResults: one accuracy row per dataset expected");
  for (const auto& row : accuracy) {
    if (row.size() != methods.size()) throw std::invalid_argument("MethodResults: one accuracy per method expected");
    for (double a : row) {
      if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("MethodResults: accuracy outside [0, 1]");
    }
  }
}

std::vector<std::vector<double>> normalized_accuracy(const MethodResults& r) {
  r.validate();
  if (r.methods.size() < 2) throw std::invalid_argument("normalized_accuracy: need at least two methods");
  std::vector<std::vector<double>> out;
  for (const auto& row : r.accuracy) {
    const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
    std::vector<double> n(row.size(), 1.0);
    if (*hi > *lo) {
      for (std::size_t m = 0; m < row.size(); ++m) n[m] = (row[m] - *lo) / (*hi - *lo);
    }
    out.push_back(std::move(n));
  }
  return out;
}

std::vector<std::vector<double>> ranks(const MethodResults& r) {
  r.validate();
  std::vector<std::vector<double>> out;
  for (const auto& row : r.accuracy) {
    std::vector<std::size_t> order(row.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    std::vector<double> rk(row.size());
    for (std::size_t s = 0; s < order.size();) {
      std::size_t e = s;
      while (e < order.size() && row[order[e]] == row[order[s]]) ++e;
      const double avg = 0.5 * static_cast<double>(s + 1 + e);
      for (std::size_t t = s; t < e; ++t) rk[order[t]] = avg;
      s = e;
    }
    out.push_back(std::move(rk));
  }
  return out;
}

SummaryStats summarize(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("summarize: no values");
  std::sort(v.begin(), v.end());
  SummaryStats s;
  s.min = v.front();
  s.max = v.back();
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  const std::size_t n = v.size();
  s.median = n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  return s;
}

std::vector<MethodSummary> rank_table(const MethodResults& r) {
  const auto rk = ranks(r);
  const auto na = r.methods.size() >= 2 ? normalized_accuracy(r)
                                        : std::vector<std::vector<double>>(r.datasets.size(), std::vector<double>{1.0});
  std::vector<MethodSummary> out;
  for (std::size_t m = 0; m < r.methods.size(); ++m) {
    std::vector<double> a, b, c;
    for (std::size_t d = 0; d < r.datasets.size(); ++d) {
      a.push_back(rk[d][m]);
      b.push_back(na[d][m]);
      c.push_back(r.accuracy[d][m]);
    }
    out.push_back({r.methods[m], summarize(a), summarize(b), summarize(c)});
  }
  return out;
}

MethodResults results_from_json(const std::string& text) {
  // {"methods": [..], "datasets": [{"name": .., "accuracy": {method: value}}]}
  const auto j = nlohmann::json::parse(text);
  MethodResults r;
  r.methods = j.at("methods").get<std::vector<std::string>>();
  for (const auto& d : j.at("datasets")) {
    r.datasets.push_back(d.at("name").get<std::string>());
    std::vector<double> row;
    for (const auto& m : r.methods) row.push_back(d.at("accuracy").at(m).get<double>());
    r.accuracy.push_back(std::move(row));
  }
  r.validate();
  return r;
}

namespace {

nlohmann::json stats_json(const SummaryStats& s) {
  return {{"min", s.min}, {"max", s.max}, {"mean", s.mean}, {"median", s.median}};
}

}  // namespace

std::string summary_to_json(const std::vector<MethodSummary>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    j.push_back({{"method", r.method},
                 {"rank", stats_json(r.rank)},
                 {"normalized_accuracy", stats_json(r.normalized_accuracy)},
                 {"accuracy", stats_json(r.accuracy)}});
  }
  return j.dump(2) + "\n";
}

std::string summary_to_text(const std::vector<MethodSummary>& rows) {
  std::size_t w = 6;
  for (const auto& r : rows) w = std::max(w, r.method.size());
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s | %27s | %27s | %27s\n", static_cast<int>(w), "Method", "Rank", "N. Accuracy", "Accuracy");
  os << buf;
  std::snprintf(buf, sizeof buf, "%-*s | %6s %6s %6s %6s | %6s %6s %6s %6s | %6s %6s %6s %6s\n", static_cast<int>(w), "",
                "min", "max", "mean", "med", "min", "max", "mean", "med", "min", "max", "mean", "med");
  os << buf << std::string(w + 90, '-') << "\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf,
                  "%-*s | %6.1f %6.1f %6.2f %6.1f | %6.3f %6.3f %6.3f %6.3f | %6.3f %6.3f %6.3f %6.3f\n",
                  static_cast<int>(w), r.method.c_str(), r.rank.min, r.rank.max, r.rank.mean, r.rank.median,
                  r.normalized_accuracy.min, r.normalized_accuracy.max, r.normalized_accuracy.mean,
                  r.normalized_accuracy.median, r.accuracy.min, r.accuracy.max, r.accuracy.mean, r.accuracy.median);
    os << buf;
  }
  return os.str();
}

}  // namespace treeprior
