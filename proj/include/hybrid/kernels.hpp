#pragma once

#include <cstddef>
#include <span>

#include "hybrid/common.hpp"

// Dense matrix kernels. All matrices are row-major and every routine
// accumulates into its output (C += ...). The OpenMP versions parallelize
// over output rows only, so each output element is summed in the same order
// regardless of thread count and results are reproducible bit for bit.
namespace hybrid::kernels {

/// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const Real> a, std::span<const Real> b,
             std::span<Real> c);
/// C[m x n] += A[m x k] * B^T, with B stored as [n x k]
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const Real> a, std::span<const Real> b,
             std::span<Real> c);
/// C[m x n] += A^T * B, with A stored as [k x m] and B as [k x n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const Real> a, std::span<const Real> b,
             std::span<Real> c);

/// out[j x i] = in[i x j]
void transpose(std::size_t rows, std::size_t cols, std::span<const Real> in, std::span<Real> out);

/// y += alpha * x
void axpy(Real alpha, std::span<const Real> x, std::span<Real> y);

int max_threads();
void set_num_threads(int n);

// Straightforward triple loops kept as the reference the parallel kernels are
// tested and benchmarked against.
namespace serial {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const Real> a, std::span<const Real> b,
             std::span<Real> c);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const Real> a, std::span<const Real> b,
             std::span<Real> c);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const Real> a, std::span<const Real> b,
             std::span<Real> c);
void axpy(Real alpha, std::span<const Real> x, std::span<Real> y);
}  // namespace serial

}  // namespace hybrid::kernels
