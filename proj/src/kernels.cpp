#include "hybrid/kernels.hpp"

#include <algorithm>
#include <vector>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace hybrid::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;
constexpr std::size_t kBlockK = 128;
constexpr std::size_t kBlockN = 512;

void check_sizes(std::size_t need_a, std::size_t need_b, std::size_t need_c, std::span<const Real> a,
                 std::span<const Real> b, std::span<Real> c) {
  if (a.size() < need_a || b.size() < need_b || c.size() < need_c) {
    throw DimensionError("gemm operand buffer smaller than its declared shape");
  }
}

}  // namespace

int max_threads() {
#if defined(_OPENMP)
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_num_threads(int n) {
#if defined(_OPENMP)
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const Real> a, std::span<const Real> b,
             std::span<Real> c) {
  check_sizes(m * k, k * n, m * n, a, b, c);
  const Real* pa = a.data();
  const Real* pb = b.data();
  Real* pc = c.data();
  const long long rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelWork && m > 1)
  for (long long i = 0; i < rows; ++i) {
    Real* crow = pc + i * n;
    const Real* arow = pa + i * k;
    for (std::size_t j0 = 0; j0 < n; j0 += kBlockN) {
      const std::size_t j1 = std::min(n, j0 + kBlockN);
      for (std::size_t p0 = 0; p0 < k; p0 += kBlockK) {
        const std::size_t p1 = std::min(k, p0 + kBlockK);
        for (std::size_t p = p0; p < p1; ++p) {
          const Real av = arow[p];
          const Real* brow = pb + p * n;
          for (std::size_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const Real> a, std::span<const Real> b,
             std::span<Real> c) {
  check_sizes(m * k, n * k, m * n, a, b, c);
  std::vector<Real> bt(k * n);
  transpose(n, k, b, bt);
  gemm_nn(m, n, k, a, bt, c);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const Real> a, std::span<const Real> b,
             std::span<Real> c) {
  check_sizes(k * m, k * n, m * n, a, b, c);
  std::vector<Real> at(m * k);
  transpose(k, m, a, at);
  gemm_nn(m, n, k, at, b, c);
}

void transpose(std::size_t rows, std::size_t cols, std::span<const Real> in, std::span<Real> out) {
  constexpr std::size_t tile = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += tile) {
    for (std::size_t j0 = 0; j0 < cols; j0 += tile) {
      const std::size_t i1 = std::min(rows, i0 + tile);
      const std::size_t j1 = std::min(cols, j0 + tile);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) out[j * rows + i] = in[i * cols + j];
    }
  }
}

void axpy(Real alpha, std::span<const Real> x, std::span<Real> y) {
  const long long n = static_cast<long long>(std::min(x.size(), y.size()));
  const Real* px = x.data();
  Real* py = y.data();
#pragma omp parallel for schedule(static) if (n >= static_cast<long long>(kParallelWork))
  for (long long i = 0; i < n; ++i) py[i] += alpha * px[i];
}

namespace serial {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const Real> a, std::span<const Real> b,
             std::span<Real> c) {
  check_sizes(m * k, k * n, m * n, a, b, c);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] += acc;
    }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const Real> a, std::span<const Real> b,
             std::span<Real> c) {
  check_sizes(m * k, n * k, m * n, a, b, c);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] += acc;
    }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const Real> a, std::span<const Real> b,
             std::span<Real> c) {
  check_sizes(k * m, k * n, m * n, a, b, c);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      c[i * n + j] += acc;
    }
}

void axpy(Real alpha, std::span<const Real> x, std::span<Real> y) {
  for (std::size_t i = 0; i < std::min(x.size(), y.size()); ++i) y[i] += alpha * x[i];
}

}  // namespace serial

}  // namespace hybrid::kernels
