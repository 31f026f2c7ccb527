// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstddef>

namespace sandglasset::blas {

// Row-major C = alpha * op(A) * op(B) + beta * C, with op(A) m x k and op(B)
// k x n. Leading dimensions are row strides, so strided sub-matrices of a
// larger tensor can be passed directly.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, float alpha, const float* a, std::size_t lda,
          const float* b, std::size_t ldb, float beta, float* c,
          std::size_t ldc);

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, double alpha, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double beta, double* c,
          std::size_t ldc);

// Pins the BLAS backend to a single worker thread (bitwise reproducibility).
// GEMM worker threads; results are bitwise reproducible only with 1.
void set_threads(int threads);
void set_single_threaded();

}  // namespace sandglasset::blas
