#include "sm2/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sm2::kernels {

namespace {

// Runs body(i) for i in [0, rows). The parallel variant splits rows across
// threads once the job is large enough to amortize the fork.
template <bool Parallel, typename Body>
void for_rows(std::size_t rows, std::size_t work, Body&& body) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
  if constexpr (Parallel) {
    [[maybe_unused]] const bool big = work >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (big)
    for (std::ptrdiff_t i = 0; i < n; ++i) body(i);
  } else {
    for (std::ptrdiff_t i = 0; i < n; ++i) body(i);
  }
}

template <bool Parallel>
void gemm_nn_impl(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n) {
  for_rows<Parallel>(m, m * n * k, [&](std::ptrdiff_t i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  });
}

template <bool Parallel>
void gemm_nt_impl(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n) {
  // Transposing b once turns the inner loop into a contiguous axpy, which
  // vectorizes without reassociating any sum.
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  gemm_nn_impl<Parallel>(a, bt.data(), c, m, k, n);
}

template <bool Parallel>
void gemm_tn_impl(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n) {
  for_rows<Parallel>(m, m * n * k, [&](std::ptrdiff_t i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double api = a[p * m + i];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  });
}

template <bool Parallel>
void log_softmax_impl(const double* x, double* out, std::size_t rows,
                      std::size_t cols) {
  for_rows<Parallel>(rows, rows * cols, [&](std::ptrdiff_t r) {
    const double* xr = x + r * cols;
    double* yr = out + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) sum += std::exp(xr[j] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < cols; ++j) yr[j] = xr[j] - lse;
  });
}

}  // namespace

#define SM2_DEFINE_KERNELS(NS, PAR)                                           \
  namespace NS {                                                              \
  void gemm_nn(std::span<const double> a, std::span<const double> b,         \
               std::span<double> c, std::size_t m, std::size_t k,            \
               std::size_t n) {                                               \
    gemm_nn_impl<PAR>(a.data(), b.data(), c.data(), m, k, n);                 \
  }                                                                           \
  void gemm_nt(std::span<const double> a, std::span<const double> b,         \
               std::span<double> c, std::size_t m, std::size_t k,            \
               std::size_t n) {                                               \
    gemm_nt_impl<PAR>(a.data(), b.data(), c.data(), m, k, n);                 \
  }                                                                           \
  void gemm_tn(std::span<const double> a, std::span<const double> b,         \
               std::span<double> c, std::size_t m, std::size_t k,            \
               std::size_t n) {                                               \
    gemm_tn_impl<PAR>(a.data(), b.data(), c.data(), m, k, n);                 \
  }                                                                           \
  void log_softmax_rows(std::span<const double> x, std::span<double> out,    \
                        std::size_t rows, std::size_t cols) {                 \
    log_softmax_impl<PAR>(x.data(), out.data(), rows, cols);                  \
  }                                                                           \
  }

SM2_DEFINE_KERNELS(serial, false)
SM2_DEFINE_KERNELS(parallel, true)

#undef SM2_DEFINE_KERNELS

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace sm2::kernels
