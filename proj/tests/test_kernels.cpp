#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "sm2/kernels.hpp"

using namespace sm2;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Triple loop straight from the definition, indices spelled out.
double naive_nn(const std::vector<double>& a, const std::vector<double>& b,
                std::size_t i, std::size_t j, std::size_t k, std::size_t n) {
  double s = 0.0;
  for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
  return s;
}

struct Dims {
  std::size_t m, k, n;
};

const Dims kShapes[] = {{1, 1, 1}, {3, 5, 2}, {17, 9, 33}, {64, 64, 64},
                        {130, 40, 70}};

}  // namespace

TEST_CASE("gemm_nn serial and parallel agree bitwise and match the naive loop") {
  for (const auto& d : kShapes) {
    const auto a = random_vec(d.m * d.k, 1), b = random_vec(d.k * d.n, 2);
    std::vector<double> cs(d.m * d.n, 0.5), cp(d.m * d.n, 0.5);
    kernels::serial::gemm_nn(a, b, cs, d.m, d.k, d.n);
    kernels::parallel::gemm_nn(a, b, cp, d.m, d.k, d.n);
    CHECK(cs == cp);
    for (std::size_t i = 0; i < d.m; ++i)
      for (std::size_t j = 0; j < d.n; ++j)
        CHECK(cs[i * d.n + j] ==
              doctest::Approx(0.5 + naive_nn(a, b, i, j, d.k, d.n)).epsilon(1e-12));
  }
}

TEST_CASE("gemm_nt and gemm_tn equal gemm_nn on explicit transposes") {
  for (const auto& d : kShapes) {
    const auto a = random_vec(d.m * d.k, 3), b = random_vec(d.k * d.n, 4);
    std::vector<double> bt(d.n * d.k), at(d.k * d.m);
    for (std::size_t p = 0; p < d.k; ++p) {
      for (std::size_t j = 0; j < d.n; ++j) bt[j * d.k + p] = b[p * d.n + j];
      for (std::size_t i = 0; i < d.m; ++i) at[p * d.m + i] = a[i * d.k + p];
    }
    std::vector<double> ref(d.m * d.n, 0.0);
    kernels::serial::gemm_nn(a, b, ref, d.m, d.k, d.n);

    std::vector<double> nt_s(d.m * d.n, 0.0), nt_p(d.m * d.n, 0.0);
    kernels::serial::gemm_nt(a, bt, nt_s, d.m, d.k, d.n);
    kernels::parallel::gemm_nt(a, bt, nt_p, d.m, d.k, d.n);
    CHECK(nt_s == nt_p);

    std::vector<double> tn_s(d.m * d.n, 0.0), tn_p(d.m * d.n, 0.0);
    kernels::serial::gemm_tn(at, b, tn_s, d.m, d.k, d.n);
    kernels::parallel::gemm_tn(at, b, tn_p, d.m, d.k, d.n);
    CHECK(tn_s == tn_p);

    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(nt_s[i] == doctest::Approx(ref[i]).epsilon(1e-12));
      CHECK(tn_s[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("log_softmax_rows normalizes and survives large magnitudes") {
  const std::size_t rows = 50, cols = 7;
  auto x = random_vec(rows * cols, 5);
  for (auto& v : x) v *= 800.0;
  std::vector<double> s(rows * cols), p(rows * cols);
  kernels::serial::log_softmax_rows(x, s, rows, cols);
  kernels::parallel::log_softmax_rows(x, p, rows, cols);
  CHECK(s == p);
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      REQUIRE(std::isfinite(s[r * cols + c]));
      total += std::exp(s[r * cols + c]);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("max_threads is positive") { CHECK(kernels::max_threads() >= 1); }
