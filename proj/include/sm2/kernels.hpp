#pragma once

// Dense float64 kernels used by the autodiff engine.
//
// Every kernel exists twice: `serial::` is the plain reference loop nest and
// `parallel::` is the same loop nest with the outer row loop split across
// OpenMP threads. Per output element the accumulation order is identical, so
// both produce bitwise-equal results.

#include <cstddef>
#include <span>

namespace sm2::kernels {

// Work (m*n*k multiply-adds) below which parallel kernels stay single-threaded.
inline constexpr std::size_t kParallelThreshold = 1 << 15;

#define SM2_DECLARE_KERNELS                                                   \
  /* c[m x n] += a[m x k] * b[k x n] */                                       \
  void gemm_nn(std::span<const double> a, std::span<const double> b,         \
               std::span<double> c, std::size_t m, std::size_t k,            \
               std::size_t n);                                                \
  /* c[m x n] += a[m x k] * b[n x k]^T */                                     \
  void gemm_nt(std::span<const double> a, std::span<const double> b,         \
               std::span<double> c, std::size_t m, std::size_t k,            \
               std::size_t n);                                                \
  /* c[m x n] += a[k x m]^T * b[k x n] */                                     \
  void gemm_tn(std::span<const double> a, std::span<const double> b,         \
               std::span<double> c, std::size_t m, std::size_t k,            \
               std::size_t n);                                                \
  /* out[r,:] = x[r,:] - logsumexp(x[r,:]) */                                 \
  void log_softmax_rows(std::span<const double> x, std::span<double> out,     \
                        std::size_t rows, std::size_t cols);

namespace serial {
SM2_DECLARE_KERNELS
}  // namespace serial

namespace parallel {
SM2_DECLARE_KERNELS
}  // namespace parallel

#undef SM2_DECLARE_KERNELS

/// Number of OpenMP threads available (1 when built without OpenMP).
int max_threads();

}  // namespace sm2::kernels
