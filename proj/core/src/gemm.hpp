#pragma once

#include <cstddef>

namespace dcspp::detail {

// C[M x N] = A[M x K] * B[K x N] (+ C when accumulate), row-major.
// Every output element is accumulated in double over k in ascending order,
// so results do not depend on the tiling.
template <typename T>
void gemm(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate);

// dst[cols x rows] = transpose(src[rows x cols]).
template <typename T>
void transpose(int rows, int cols, const T* src, T* dst);

}  // namespace dcspp::detail
