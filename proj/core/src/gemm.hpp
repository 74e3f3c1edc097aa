#pragma once

namespace resnet::detail {

// Row-major C = alpha * op(A) * op(B) + beta * C, with op(X) = X or X^T.
// op(A) is m x k, op(B) is k x n. Backed by single-threaded BLAS.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc);
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc);

}  // namespace resnet::detail
