#include "gemm.hpp"

#include <algorithm>
#include <array>

namespace dcspp::detail {

namespace {
constexpr int kTileM = 8;
constexpr int kTileN = 256;
}  // namespace

template <typename T>
void gemm(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
  alignas(64) std::array<double, kTileM * kTileN> acc;
  for (int n0 = 0; n0 < N; n0 += kTileN) {
    const int nb = std::min(kTileN, N - n0);
    for (int m0 = 0; m0 < M; m0 += kTileM) {
      const int mb = std::min(kTileM, M - m0);
      std::fill(acc.begin(), acc.begin() + mb * kTileN, 0.0);
      for (int k = 0; k < K; ++k) {
        const T* brow = B + static_cast<std::size_t>(k) * N + n0;
        for (int mi = 0; mi < mb; ++mi) {
          const double a = static_cast<double>(A[static_cast<std::size_t>(m0 + mi) * K + k]);
          if (a == 0.0) continue;
          double* arow = acc.data() + mi * kTileN;
#pragma omp simd
          for (int j = 0; j < nb; ++j) arow[j] += a * static_cast<double>(brow[j]);
        }
      }
      for (int mi = 0; mi < mb; ++mi) {
        T* crow = C + static_cast<std::size_t>(m0 + mi) * N + n0;
        const double* arow = acc.data() + mi * kTileN;
        if (accumulate) {
          for (int j = 0; j < nb; ++j) {
            crow[j] = static_cast<T>(static_cast<double>(crow[j]) + arow[j]);
          }
        } else {
          for (int j = 0; j < nb; ++j) crow[j] = static_cast<T>(arow[j]);
        }
      }
    }
  }
}

template <typename T>
void transpose(int rows, int cols, const T* src, T* dst) {
  constexpr int kBlock = 32;
  for (int r0 = 0; r0 < rows; r0 += kBlock) {
    for (int c0 = 0; c0 < cols; c0 += kBlock) {
      const int r1 = std::min(rows, r0 + kBlock);
      const int c1 = std::min(cols, c0 + kBlock);
      for (int r = r0; r < r1; ++r) {
        for (int c = c0; c < c1; ++c) {
          dst[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
        }
      }
    }
  }
}

template void gemm<float>(int, int, int, const float*, const float*, float*, bool);
template void gemm<double>(int, int, int, const double*, const double*, double*, bool);
template void transpose<float>(int, int, const float*, float*);
template void transpose<double>(int, int, const double*, double*);

}  // namespace dcspp::detail
