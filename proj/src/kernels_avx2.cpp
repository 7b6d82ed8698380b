// Compiled with -mavx2 -mfma. Only reached through avx2_table() after a CPUID check.
#include <immintrin.h>

#include <cmath>

#include "dmwm/kernels.hpp"

namespace dmwm::kernels {
namespace {

constexpr std::size_t kRows = 4;
constexpr std::size_t kCols = 8;

// Every C element follows c = fma(a_p, b_p, c) for p = 0..k-1 in order, in the
// vector tiles and in the scalar tails alike.
template <bool kTransA>
inline double a_at(const double* a, std::size_t lda, std::size_t i, std::size_t p) {
  if constexpr (kTransA) {
    return a[p * lda + i];
  } else {
    return a[i * lda + p];
  }
}

template <bool kTransA>
void gemm_tile_rows4(std::size_t i0, std::size_t n, std::size_t k, std::size_t lda,
                     const double* a, const double* b, double* c) {
  std::size_t j = 0;
  for (; j + kCols <= n; j += kCols) {
    __m256d acc[kRows][2];
    for (std::size_t r = 0; r < kRows; ++r) {
      acc[r][0] = _mm256_loadu_pd(c + (i0 + r) * n + j);
      acc[r][1] = _mm256_loadu_pd(c + (i0 + r) * n + j + 4);
    }
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d b0 = _mm256_loadu_pd(b + p * n + j);
      const __m256d b1 = _mm256_loadu_pd(b + p * n + j + 4);
      for (std::size_t r = 0; r < kRows; ++r) {
        const __m256d av = _mm256_set1_pd(a_at<kTransA>(a, lda, i0 + r, p));
        acc[r][0] = _mm256_fmadd_pd(av, b0, acc[r][0]);
        acc[r][1] = _mm256_fmadd_pd(av, b1, acc[r][1]);
      }
    }
    for (std::size_t r = 0; r < kRows; ++r) {
      _mm256_storeu_pd(c + (i0 + r) * n + j, acc[r][0]);
      _mm256_storeu_pd(c + (i0 + r) * n + j + 4, acc[r][1]);
    }
  }
  for (; j + 4 <= n; j += 4) {
    __m256d acc[kRows];
    for (std::size_t r = 0; r < kRows; ++r) acc[r] = _mm256_loadu_pd(c + (i0 + r) * n + j);
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d b0 = _mm256_loadu_pd(b + p * n + j);
      for (std::size_t r = 0; r < kRows; ++r) {
        acc[r] = _mm256_fmadd_pd(_mm256_set1_pd(a_at<kTransA>(a, lda, i0 + r, p)), b0, acc[r]);
      }
    }
    for (std::size_t r = 0; r < kRows; ++r) _mm256_storeu_pd(c + (i0 + r) * n + j, acc[r]);
  }
  for (; j < n; ++j) {
    for (std::size_t r = 0; r < kRows; ++r) {
      double acc = c[(i0 + r) * n + j];
      for (std::size_t p = 0; p < k; ++p) acc = std::fma(a_at<kTransA>(a, lda, i0 + r, p), b[p * n + j], acc);
      c[(i0 + r) * n + j] = acc;
    }
  }
}

template <bool kTransA>
void gemm_row1(std::size_t i, std::size_t n, std::size_t k, std::size_t lda, const double* a,
               const double* b, double* c) {
  double* crow = c + i * n;
  std::size_t j = 0;
  for (; j + kCols <= n; j += kCols) {
    __m256d acc0 = _mm256_loadu_pd(crow + j);
    __m256d acc1 = _mm256_loadu_pd(crow + j + 4);
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d av = _mm256_set1_pd(a_at<kTransA>(a, lda, i, p));
      acc0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * n + j), acc0);
      acc1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * n + j + 4), acc1);
    }
    _mm256_storeu_pd(crow + j, acc0);
    _mm256_storeu_pd(crow + j + 4, acc1);
  }
  for (; j + 4 <= n; j += 4) {
    __m256d acc = _mm256_loadu_pd(crow + j);
    for (std::size_t p = 0; p < k; ++p) {
      acc = _mm256_fmadd_pd(_mm256_set1_pd(a_at<kTransA>(a, lda, i, p)), _mm256_loadu_pd(b + p * n + j), acc);
    }
    _mm256_storeu_pd(crow + j, acc);
  }
  for (; j < n; ++j) {
    double acc = crow[j];
    for (std::size_t p = 0; p < k; ++p) acc = std::fma(a_at<kTransA>(a, lda, i, p), b[p * n + j], acc);
    crow[j] = acc;
  }
}

void gemm_nn_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c) {
  std::size_t i = 0;
  for (; i + kRows <= m; i += kRows) gemm_tile_rows4<false>(i, n, k, k, a, b, c);
  for (; i < m; ++i) gemm_row1<false>(i, n, k, k, a, b, c);
}

void gemm_tn_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c) {
  std::size_t i = 0;
  for (; i + kRows <= m; i += kRows) gemm_tile_rows4<true>(i, n, k, m, a, b, c);
  for (; i < m; ++i) gemm_row1<true>(i, n, k, m, a, b, c);
}

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// Dot product with a fixed reduction order shared by the blocked and tail paths.
inline double dot_finish(__m256d acc, const double* a, const double* b, std::size_t p,
                         std::size_t k) {
  double s = hsum(acc);
  for (; p < k; ++p) s = std::fma(a[p], b[p], s);
  return s;
}

void gemm_nt_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c) {
  const std::size_t k4 = k & ~std::size_t{3};
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* b0 = b + (j + 0) * k;
      const double* b1 = b + (j + 1) * k;
      const double* b2 = b + (j + 2) * k;
      const double* b3 = b + (j + 3) * k;
      __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k4; p += 4) {
        const __m256d av = _mm256_loadu_pd(arow + p);
        s0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b0 + p), s0);
        s1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b1 + p), s1);
        s2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b2 + p), s2);
        s3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b3 + p), s3);
      }
      c[i * n + j + 0] += dot_finish(s0, arow, b0, k4, k);
      c[i * n + j + 1] += dot_finish(s1, arow, b1, k4, k);
      c[i * n + j + 2] += dot_finish(s2, arow, b2, k4, k);
      c[i * n + j + 3] += dot_finish(s3, arow, b3, k4, k);
    }
    for (; j < n; ++j) {
      const double* bj = b + j * k;
      __m256d s = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k4; p += 4) {
        s = _mm256_fmadd_pd(_mm256_loadu_pd(arow + p), _mm256_loadu_pd(bj + p), s);
      }
      c[i * n + j] += dot_finish(s, arow, bj, k4, k);
    }
  }
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable table{Backend::kAvx2, &gemm_nn_avx2, &gemm_tn_avx2, &gemm_nt_avx2};
  return table;
}

}  // namespace dmwm::kernels
