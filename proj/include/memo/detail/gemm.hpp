#pragma once

#include <algorithm>
#include <cstddef>

namespace memo::detail {

// Row-major C[M,N] (+)= A[M,K] * B[K,N]. Register-tiled 4x32 micro-kernel;
// the k-loop broadcasts one A element against a contiguous B row, which
// vectorizes without reassociation.
template <typename T>
void gemm(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
  constexpr int MR = 4;
  constexpr int NR = 32;
  for (int i0 = 0; i0 < M; i0 += MR) {
    const int mr = std::min(MR, M - i0);
    for (int j0 = 0; j0 < N; j0 += NR) {
      const int nr = std::min(NR, N - j0);
      if (mr == MR && nr == NR) {
        T acc[MR][NR] = {};
        for (int k = 0; k < K; ++k) {
          const T* brow = B + static_cast<size_t>(k) * N + j0;
          for (int i = 0; i < MR; ++i) {
            const T a = A[static_cast<size_t>(i0 + i) * K + k];
            for (int j = 0; j < NR; ++j) acc[i][j] += a * brow[j];
          }
        }
        for (int i = 0; i < MR; ++i) {
          T* crow = C + static_cast<size_t>(i0 + i) * N + j0;
          if (accumulate) {
            for (int j = 0; j < NR; ++j) crow[j] += acc[i][j];
          } else {
            for (int j = 0; j < NR; ++j) crow[j] = acc[i][j];
          }
        }
      } else {
        for (int i = 0; i < mr; ++i) {
          const T* arow = A + static_cast<size_t>(i0 + i) * K;
          T* crow = C + static_cast<size_t>(i0 + i) * N;
          for (int j = 0; j < nr; ++j) {
            T s = 0;
            for (int k = 0; k < K; ++k)
              s += arow[k] * B[static_cast<size_t>(k) * N + j0 + j];
            if (accumulate)
              crow[j0 + j] += s;
            else
              crow[j0 + j] = s;
          }
        }
      }
    }
  }
}

// dst[c][r] = src[r][c] for src [rows, cols].
template <typename T>
void transpose(int rows, int cols, const T* src, T* dst) {
  constexpr int TB = 16;
  for (int r0 = 0; r0 < rows; r0 += TB) {
    const int r1 = std::min(rows, r0 + TB);
    for (int c0 = 0; c0 < cols; c0 += TB) {
      const int c1 = std::min(cols, c0 + TB);
      for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c)
          dst[static_cast<size_t>(c) * rows + r] =
              src[static_cast<size_t>(r) * cols + c];
    }
  }
}

}  // namespace memo::detail
