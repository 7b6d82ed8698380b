#pragma once

// Dense row-major double-precision matrix kernels with a portable scalar
// reference and an AVX2/FMA variant selected at runtime.
//
// All kernels accumulate into C. Leading dimensions equal the column counts
// of the row-major operands.
//
// Row independence: for gemm_nn and gemm_nt the value written to C row i
// depends only on row i of A (and on B), never on the number of rows m. Batched
// inference therefore yields bit-identical rows to one-row-at-a-time inference
// under a fixed backend.

#include <cstddef>
#include <string_view>

namespace dmwm::kernels {

enum class Backend { kScalar, kAvx2 };

std::string_view backend_name(Backend b);

// C[m,n] += A[m,k] * B[k,n]
using GemmNN = void (*)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                        const double* b, double* c);
// C[m,n] += A[k,m]^T * B[k,n]
using GemmTN = void (*)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                        const double* b, double* c);
// C[m,n] += A[m,k] * B[n,k]^T
using GemmNT = void (*)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                        const double* b, double* c);

struct KernelTable {
  Backend backend;
  GemmNN gemm_nn;
  GemmTN gemm_tn;
  GemmNT gemm_nt;
};

// Reference implementations (compiled without FP contraction).
const KernelTable& scalar_table();
// AVX2/FMA implementations; only valid when avx2_supported() is true.
const KernelTable& avx2_table();

bool avx2_supported();

// Best backend for this CPU, unless DMWM_SIMD=scalar|avx2 overrides it.
Backend detect_backend();

// Active table used by the autodiff layer. Selected lazily on first use.
const KernelTable& active();
void set_backend(Backend b);  // throws ConfigError if unsupported
Backend active_backend();

inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a,
                    const double* b, double* c) {
  active().gemm_nn(m, n, k, a, b, c);
}
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a,
                    const double* b, double* c) {
  active().gemm_tn(m, n, k, a, b, c);
}
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a,
                    const double* b, double* c) {
  active().gemm_nt(m, n, k, a, b, c);
}

}  // namespace dmwm::kernels
