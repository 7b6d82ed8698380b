// Built with -ffp-contract=off so this stays a plain multiply-add reference.
#include "dmwm/kernels.hpp"

namespace dmwm::kernels {
namespace {

void gemm_nn_scalar(std::size_t m, std::size_t n, std::size_t k, const double* a,
                    const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_tn_scalar(std::size_t m, std::size_t n, std::size_t k, const double* a,
                    const double* b, double* c) {
  for (std::size_t r = 0; r < k; ++r) {
    const double* arow = a + r * m;
    const double* brow = b + r * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt_scalar(std::size_t m, std::size_t n, std::size_t k, const double* a,
                    const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{Backend::kScalar, &gemm_nn_scalar, &gemm_tn_scalar,
                                 &gemm_nt_scalar};
  return table;
}

}  // namespace dmwm::kernels
