#pragma once

namespace mvr::detail {

/// Row-major C (m x n) = op(A) * op(B), or C += ... when `accumulate`.
/// op(A) is m x k: A is stored m x k, or k x m when `trans_a`. Same for B (k x n).
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);

}  // namespace mvr::detail
