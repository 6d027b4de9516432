#pragma once

#include <cstddef>

namespace splitbn {

enum class Trans : bool { no = false, yes = true };

// Row-major C(m x n) = alpha * op(A)(m x k) * op(B)(k x n) + beta * C.
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha,
          const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
          std::size_t ldc);
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
          std::size_t ldc);

}  // namespace splitbn
