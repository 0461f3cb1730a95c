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

// Dense kernels behind the autodiff primitives.
//
// Every output row is produced by its own loop with a fixed accumulation
// order, so a row's value never depends on how many other rows are in the
// batch. The attention mask contract relies on this.

#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>

namespace treeprior::kernels {

namespace detail {

// Multiply-add used by every kernel. The build disables implicit
// contraction, so each kernel path rounds the same way.
template <typename T>
inline T madd(T a, T b, T c) {
#if defined(__FMA__)
  return std::fma(a, b, c);
#else
  return a * b + c;
#endif
}

// Register tile: R rows by W columns of C, accumulated over all of k in
// ascending order.
template <typename T, std::size_t R, std::size_t W>
inline void gemm_tile(const T* __restrict a, std::size_t lda, const T* __restrict b, std::size_t ldb,
                      T* __restrict c, std::size_t ldc, std::size_t k, bool accumulate) {
  T acc[R][W];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < W; ++j) acc[r][j] = accumulate ? c[r * ldc + j] : T(0);
  for (std::size_t p = 0; p < k; ++p) {
    const T* __restrict brow = b + p * ldb;
    for (std::size_t r = 0; r < R; ++r) {
      const T av = a[r * lda + p];
      for (std::size_t j = 0; j < W; ++j) acc[r][j] = madd(av, brow[j], acc[r][j]);
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < W; ++j) c[r * ldc + j] = acc[r][j];
}

template <typename T, std::size_t W>
inline void gemm_column_block(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
                              std::size_t j0, bool accumulate) {
  constexpr std::size_t R = 4;
  std::size_t i = 0;
  for (; i + R <= m; i += R) gemm_tile<T, R, W>(a + i * k, k, b + j0, n, c + i * n + j0, n, k, accumulate);
  for (; i < m; ++i) gemm_tile<T, 1, W>(a + i * k, k, b + j0, n, c + i * n + j0, n, k, accumulate);
}

// C[p0:p0+R, j0:j0+W] += A[:, p0:p0+R]^T * B[:, j0:j0+W], summing rows of A in order.
template <typename T, std::size_t R, std::size_t W>
inline void gemm_tn_tile(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m, std::size_t k,
                         std::size_t n, std::size_t p0, std::size_t j0) {
  T acc[R][W];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < W; ++j) acc[r][j] = c[(p0 + r) * n + j0 + j];
  for (std::size_t i = 0; i < m; ++i) {
    const T* __restrict brow = b + i * n + j0;
    const T* __restrict arow = a + i * k + p0;
    for (std::size_t r = 0; r < R; ++r) {
      const T av = arow[r];
      for (std::size_t j = 0; j < W; ++j) acc[r][j] = madd(av, brow[j], acc[r][j]);
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < W; ++j) c[(p0 + r) * n + j0 + j] = acc[r][j];
}

template <typename T, std::size_t W>
inline void gemm_tn_column_block(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
                                 std::size_t j0) {
  constexpr std::size_t R = 4;
  std::size_t p = 0;
  for (; p + R <= k; p += R) gemm_tn_tile<T, R, W>(a, b, c, m, k, n, p, j0);
  for (; p < k; ++p) gemm_tn_tile<T, 1, W>(a, b, c, m, k, n, p, j0);
}

}  // namespace detail

/// C[m,n] (+)= A[m,k] * B[k,n]
///
/// Column blocking depends only on n, and every element sums over k in
/// ascending order, so row i of C is the same for any m.
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  constexpr std::size_t kWide = 128 / sizeof(T);
  constexpr std::size_t kNarrow = 32 / sizeof(T);
  std::size_t j0 = 0;
  for (; j0 + kWide <= n; j0 += kWide) detail::gemm_column_block<T, kWide>(a, b, c, m, k, n, j0, accumulate);
  for (; j0 + kNarrow <= n; j0 += kNarrow) detail::gemm_column_block<T, kNarrow>(a, b, c, m, k, n, j0, accumulate);
  for (; j0 < n; ++j0) detail::gemm_column_block<T, 1>(a, b, c, m, k, n, j0, accumulate);
}

/// C[k,n] += A[m,k]^T * B[m,n]. Each C element sums over rows of A in order.
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  constexpr std::size_t kWide = 128 / sizeof(T);
  constexpr std::size_t kNarrow = 32 / sizeof(T);
  std::size_t j0 = 0;
  for (; j0 + kWide <= n; j0 += kWide) detail::gemm_tn_column_block<T, kWide>(a, b, c, m, k, n, j0);
  for (; j0 + kNarrow <= n; j0 += kNarrow) detail::gemm_tn_column_block<T, kNarrow>(a, b, c, m, k, n, j0);
  for (; j0 < n; ++j0) detail::gemm_tn_column_block<T, 1>(a, b, c, m, k, n, j0);
}

/// out[n,m] = in[m,n]^T
template <typename T>
void transpose(const T* __restrict in, T* __restrict out, std::size_t m, std::size_t n) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t i0 = 0; i0 < m; i0 += kBlock) {
    for (std::size_t j0 = 0; j0 < n; j0 += kBlock) {
      const std::size_t i1 = i0 + kBlock < m ? i0 + kBlock : m;
      const std::size_t j1 = j0 + kBlock < n ? j0 + kBlock : n;
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) out[j * m + i] = in[i * n + j];
    }
  }
}

/// exp for the softmax and activation kernels. The float path is a
/// vectorizable Cephes-style polynomial (about 2 ulp); double uses std::exp
/// so gradient checks see the exact function.
template <typename T>
inline T fast_exp(T x) {
  if constexpr (sizeof(T) == 4) {
    x = x < -87.0f ? -87.0f : (x > 88.0f ? 88.0f : x);
    const float n = std::floor(x * 1.44269504088896341f + 0.5f);
    const float r = x - n * 0.693359375f + n * 2.12194440e-4f;
    float p = 1.9875691500e-4f;
    p = p * r + 1.3981999507e-3f;
    p = p * r + 8.3334519073e-3f;
    p = p * r + 4.1665795894e-2f;
    p = p * r + 1.6666665459e-1f;
    p = p * r + 5.0000001201e-1f;
    const float e = p * r * r + r + 1.0f;
    const auto bits = static_cast<std::uint32_t>(static_cast<std::int32_t>(n) + 127) << 23;
    return e * std::bit_cast<float>(bits);
  } else {
    return std::exp(x);
  }
}

template <typename T>
inline T fast_tanh(T x) {
  if constexpr (sizeof(T) == 4) {
    return 1.0f - 2.0f / (fast_exp(2.0f * x) + 1.0f);
  } else {
    return std::tanh(x);
  }
}

template <typename T>
T dot(const T* __restrict a, const T* __restrict b, std::size_t n) {
  T s = T(0);
  for (std::size_t i = 0; i < n; ++i) s = detail::madd(a[i], b[i], s);
  return s;
}

}  // namespace treeprior::kernels
