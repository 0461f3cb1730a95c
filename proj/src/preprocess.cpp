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

#include "treeprior/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace treeprior {

namespace {

constexpr std::size_t kMaxQuantiles = 1000;
constexpr double kCdfClip = 1e-6;

double column_mean_ignoring_nan(const Matrix& X, std::size_t c) {
  double total = 0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < X.rows(); ++r) {
    const double v = X(r, c);
    if (!std::isnan(v)) {
      total += v;
      ++count;
    }
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

double impute(double v, double mean) { return std::isnan(v) ? mean : v; }

std::vector<double> reference_quantiles(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  const std::size_t nq = std::min(kMaxQuantiles, n);
  std::vector<double> q(nq);
  if (nq == 1) {
    q[0] = values[0];
    return q;
  }
  for (std::size_t i = 0; i < nq; ++i) {
    const double pos = static_cast<double>(i) * static_cast<double>(n - 1) / static_cast<double>(nq - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, n - 1);
    const double frac = pos - static_cast<double>(lo);
    q[i] = values[lo] + frac * (values[hi] - values[lo]);
  }
  // Interpolation can break monotonicity by one ulp.
  for (std::size_t i = 1; i < nq; ++i) q[i] = std::max(q[i], q[i - 1]);
  return q;
}

double to_normal(std::span<const double> quantiles, double x) {
  const double p = std::clamp(reference_cdf(quantiles, x), kCdfClip, 1.0 - kCdfClip);
  return inverse_normal_cdf(p);
}

}  // namespace

void validate_episode(const Episode& ep) {
  if (ep.X_support.cols() != kModelFeatures || ep.X_query.cols() != kModelFeatures) {
    throw std::invalid_argument("episode: feature width must be " + std::to_string(kModelFeatures));
  }
  if (ep.n_classes < 1 || ep.n_classes > kMaxClasses) throw std::invalid_argument("episode: n_classes outside [1, 10]");
  if (ep.y_support.size() != ep.X_support.rows()) throw std::invalid_argument("episode: support label count mismatch");
  if (ep.y_query && ep.y_query->size() != ep.X_query.rows()) throw std::invalid_argument("episode: query label count mismatch");
  auto check_labels = [&](std::span<const int> y) {
    for (int label : y) {
      if (label < 0 || label >= ep.n_classes) throw std::invalid_argument("episode: label outside [0, n_classes)");
    }
  };
  check_labels(ep.y_support);
  if (ep.y_query) check_labels(*ep.y_query);
  for (const Matrix* m : {&ep.X_support, &ep.X_query}) {
    for (double v : m->data()) {
      if (!std::isfinite(v)) throw std::invalid_argument("episode: non-finite feature");
    }
  }
}

std::vector<double> anova_f_scores(const Matrix& X, std::span<const int> y, int n_classes) {
  if (y.size() != X.rows()) throw std::invalid_argument("anova_f_scores: label count does not match rows");
  const auto k_all = static_cast<std::size_t>(n_classes);
  std::vector<std::size_t> counts(k_all, 0);
  for (int label : y) {
    if (label < 0 || label >= n_classes) throw std::invalid_argument("anova_f_scores: label out of range");
    ++counts[static_cast<std::size_t>(label)];
  }
  const auto present = static_cast<std::size_t>(std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }));
  if (present < 2) throw std::invalid_argument("anova_f_scores: need at least two classes");
  const std::size_t n = X.rows();

  std::vector<double> scores(X.cols());
  std::vector<double> class_sum(k_all);
  for (std::size_t c = 0; c < X.cols(); ++c) {
    std::fill(class_sum.begin(), class_sum.end(), 0.0);
    double total = 0;
    for (std::size_t r = 0; r < n; ++r) {
      class_sum[static_cast<std::size_t>(y[r])] += X(r, c);
      total += X(r, c);
    }
    const double grand = total / static_cast<double>(n);
    double ss_between = 0;
    for (std::size_t k = 0; k < k_all; ++k) {
      if (counts[k] == 0) continue;
      const double diff = class_sum[k] / static_cast<double>(counts[k]) - grand;
      ss_between += static_cast<double>(counts[k]) * diff * diff;
    }
    double ss_within = 0;
    for (std::size_t r = 0; r < n; ++r) {
      const auto k = static_cast<std::size_t>(y[r]);
      const double diff = X(r, c) - class_sum[k] / static_cast<double>(counts[k]);
      ss_within += diff * diff;
    }
    const double df_between = static_cast<double>(present - 1);
    const double df_within = static_cast<double>(n - present);
    if (ss_within == 0.0 || df_within == 0.0) {
      scores[c] = ss_between > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    } else {
      scores[c] = (ss_between / df_between) / (ss_within / df_within);
    }
  }
  return scores;
}

double inverse_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("inverse_normal_cdf: p must lie in (0, 1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01, -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  constexpr double p_high = 1.0 - p_low;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p <= p_high) {
    const double q = p - 0.5;
    const double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  const double q = std::sqrt(-2.0 * std::log(1.0 - p));
  return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
         ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
}

double reference_cdf(std::span<const double> quantiles, double x) {
  const std::size_t nq = quantiles.size();
  if (nq == 0) throw std::invalid_argument("reference_cdf: no quantiles");
  if (nq == 1) return 0.5;
  const double step = 1.0 / static_cast<double>(nq - 1);
  const auto lo_it = std::lower_bound(quantiles.begin(), quantiles.end(), x);
  const auto hi_it = std::upper_bound(lo_it, quantiles.end(), x);
  const auto lo = static_cast<std::size_t>(lo_it - quantiles.begin());
  const auto hi = static_cast<std::size_t>(hi_it - quantiles.begin());
  if (lo < hi) {
    // x equals the references lo..hi-1.
    return 0.5 * (static_cast<double>(lo) + static_cast<double>(hi - 1)) * step;
  }
  if (lo == 0) return 0.0;
  if (lo == nq) return 1.0;
  const double left = quantiles[lo - 1], right = quantiles[lo];
  const double frac = (x - left) / (right - left);
  return (static_cast<double>(lo - 1) + frac) * step;
}

PreprocessState fit_preprocess(const Matrix& X, std::span<const int> y, int n_classes) {
  if (X.rows() == 0) throw std::invalid_argument("fit_preprocess: no rows");
  if (y.size() != X.rows()) throw std::invalid_argument("fit_preprocess: label count does not match rows");
  PreprocessState st;
  st.n_input_features = X.cols();
  st.column_means.resize(X.cols());
  for (std::size_t c = 0; c < X.cols(); ++c) st.column_means[c] = column_mean_ignoring_nan(X, c);

  std::vector<std::size_t> varying;
  for (std::size_t c = 0; c < X.cols(); ++c) {
    const double first = impute(X(0, c), st.column_means[c]);
    for (std::size_t r = 1; r < X.rows(); ++r) {
      if (impute(X(r, c), st.column_means[c]) != first) {
        varying.push_back(c);
        break;
      }
    }
  }
  if (varying.empty()) throw std::invalid_argument("fit_preprocess: every column is constant");

  if (varying.size() > kModelFeatures) {
    Matrix sub(X.rows(), varying.size());
    for (std::size_t r = 0; r < X.rows(); ++r)
      for (std::size_t j = 0; j < varying.size(); ++j) sub(r, j) = impute(X(r, varying[j]), st.column_means[varying[j]]);
    const std::vector<double> f = anova_f_scores(sub, y, n_classes);
    std::vector<std::size_t> order(varying.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return f[a] > f[b]; });
    order.resize(kModelFeatures);
    std::sort(order.begin(), order.end());
    std::vector<std::size_t> kept;
    for (auto j : order) kept.push_back(varying[j]);
    varying = std::move(kept);
  }
  st.kept_features = std::move(varying);

  for (std::size_t c : st.kept_features) {
    std::vector<double> col(X.rows());
    for (std::size_t r = 0; r < X.rows(); ++r) col[r] = impute(X(r, c), st.column_means[c]);
    st.quantiles.push_back(reference_quantiles(col));
    const auto& q = st.quantiles.back();
    double mean = 0;
    for (auto& v : col) mean += (v = to_normal(q, v));
    mean /= static_cast<double>(col.size());
    double var = 0;
    for (double v : col) var += (v - mean) * (v - mean);
    var /= static_cast<double>(col.size());
    st.post_mean.push_back(mean);
    st.post_std.push_back(var > 0 ? std::sqrt(var) : 1.0);
  }
  return st;
}

Matrix apply_preprocess(const PreprocessState& st, const Matrix& X) {
  if (X.cols() != st.n_input_features) {
    throw std::invalid_argument("apply_preprocess: expected " + std::to_string(st.n_input_features) + " columns, got " +
                                std::to_string(X.cols()));
  }
  Matrix out(X.rows(), kModelFeatures, 0.0);
  const double scale = st.feature_scale();
  for (std::size_t j = 0; j < st.kept_features.size(); ++j) {
    const std::size_t c = st.kept_features[j];
    for (std::size_t r = 0; r < X.rows(); ++r) {
      const double z = to_normal(st.quantiles[j], impute(X(r, c), st.column_means[c]));
      out(r, j) = (z - st.post_mean[j]) / st.post_std[j] * scale;
    }
  }
  return out;
}

Episode permute_episode(const Episode& ep, std::span<const std::size_t> feature_perm, std::span<const int> class_map) {
  if (feature_perm.size() != kModelFeatures) throw std::invalid_argument("permute_episode: feature permutation size");
  if (class_map.size() != static_cast<std::size_t>(ep.n_classes)) throw std::invalid_argument("permute_episode: class map size");
  auto permute_cols = [&](const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r)
      for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(r, feature_perm[c]);
    return out;
  };
  auto relabel = [&](const std::vector<int>& y) {
    std::vector<int> out(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = class_map[static_cast<std::size_t>(y[i])];
    return out;
  };
  Episode out;
  out.n_classes = ep.n_classes;
  out.X_support = permute_cols(ep.X_support);
  out.X_query = permute_cols(ep.X_query);
  out.y_support = relabel(ep.y_support);
  if (ep.y_query) out.y_query = relabel(*ep.y_query);
  return out;
}

Episode shuffle_augment(const Episode& ep, Rng& rng) {
  const auto feature_perm = random_permutation(kModelFeatures, rng);
  const auto class_perm = random_permutation(static_cast<std::size_t>(ep.n_classes), rng);
  std::vector<int> class_map(class_perm.begin(), class_perm.end());
  return permute_episode(ep, feature_perm, class_map);
}

}  // namespace treeprior
