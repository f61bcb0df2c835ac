#pragma once

#include <cstddef>
#include <vector>

namespace nfce::nn::detail {

/// C[m x n] += A[m x k] * B[k x n], all row-major with explicit leading
/// dimensions. When `a_transposed` is set, A is read as the transpose of a
/// row-major [k x m] matrix. The innermost loop runs over contiguous columns
/// of B and C so it vectorizes without reassociating reductions.
template <typename T>
void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const T* a,
              std::size_t lda, bool a_transposed, const T* b, std::size_t ldb,
              T* c, std::size_t ldc) {
  auto a_at = [&](std::size_t i, std::size_t p) {
    return a_transposed ? a[p * lda + i] : a[i * lda + p];
  };
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    T* __restrict c0 = c + i * ldc;
    T* __restrict c1 = c0 + ldc;
    T* __restrict c2 = c1 + ldc;
    T* __restrict c3 = c2 + ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const T a0 = a_at(i, p), a1 = a_at(i + 1, p), a2 = a_at(i + 2, p),
              a3 = a_at(i + 3, p);
      const T* __restrict bp = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) {
        const T bv = bp[j];
        c0[j] += a0 * bv;
        c1[j] += a1 * bv;
        c2[j] += a2 * bv;
        c3[j] += a3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    T* __restrict ci = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a_at(i, p);
      const T* __restrict bp = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

/// dst[cols x rows] = transpose(src[rows x cols]).
template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

}  // namespace nfce::nn::detail
