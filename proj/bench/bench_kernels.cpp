// Serial reference kernels versus their OpenMP versions, plus per-utterance
// batch gradients in both modes. Prints one line per case with the median
// wall time and whether the two outputs are bitwise equal.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "sm2/corpus.hpp"
#include "sm2/kernels.hpp"
#include "sm2/trainer.hpp"

using namespace sm2;

namespace {

double median_ms(const std::function<void()>& fn, int reps) {
  std::vector<double> t;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    t.push_back(std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t0)
                    .count());
  }
  std::nth_element(t.begin(), t.begin() + reps / 2, t.end());
  return t[reps / 2];
}

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

void report(const char* name, double serial, double parallel, bool equal) {
  std::printf("%-28s serial %9.3f ms  parallel %9.3f ms  speedup %5.2fx  %s\n",
              name, serial, parallel, serial / parallel,
              equal ? "bitwise-equal" : "MISMATCH");
}

}  // namespace

int main() {
  std::printf("threads: %d\n", kernels::max_threads());

  for (std::size_t n : {64u, 128u, 256u}) {
    const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
    std::vector<double> cs(n * n), cp(n * n);
    const double s = median_ms([&] {
      std::fill(cs.begin(), cs.end(), 0.0);
      kernels::serial::gemm_nn(a, b, cs, n, n, n);
    }, 7);
    const double p = median_ms([&] {
      std::fill(cp.begin(), cp.end(), 0.0);
      kernels::parallel::gemm_nn(a, b, cp, n, n, n);
    }, 7);
    char name[64];
    std::snprintf(name, sizeof name, "gemm_nn %zux%zux%zu", n, n, n);
    report(name, s, p, cs == cp);

    std::fill(cs.begin(), cs.end(), 0.0);
    std::fill(cp.begin(), cp.end(), 0.0);
    const double st = median_ms([&] { kernels::serial::gemm_nt(a, b, cs, n, n, n); }, 7);
    const double pt = median_ms([&] { kernels::parallel::gemm_nt(a, b, cp, n, n, n); }, 7);
    std::snprintf(name, sizeof name, "gemm_nt %zux%zux%zu", n, n, n);
    report(name, st, pt, cs == cp);
  }

  {
    const std::size_t rows = 4096, cols = 21;
    const auto x = random_vec(rows * cols, 3);
    std::vector<double> s(rows * cols), p(rows * cols);
    const double ts = median_ms([&] { kernels::serial::log_softmax_rows(x, s, rows, cols); }, 9);
    const double tp = median_ms([&] { kernels::parallel::log_softmax_rows(x, p, rows, cols); }, 9);
    report("log_softmax 4096x21", ts, tp, s == p);
  }

  {
    const auto suite = corpus::make_suite(4, 1, 20, 16, 1);
    corpus::CorpusOptions opt;
    opt.train_per_pair = 8;
    opt.test_per_pair = 0;
    const auto c = corpus::generate_corpus(suite, corpus::parse_pair_set("A>M,B>M"), opt);
    Model m(ModelConfig{});
    const BranchId b = m.add_branch("M", 20, 1);
    const auto batch = c.select("train");
    const std::vector<const Tensor*> none(batch.size(), nullptr);
    BatchResult rs, rp;
    const double ts = median_ms([&] {
      rs = batch_gradients(m, b, batch, m.config().mask, none, false);
    }, 3);
    const double tp = median_ms([&] {
      rp = batch_gradients(m, b, batch, m.config().mask, none, true);
    }, 3);
    bool equal = rs.nll == rp.nll;
    for (std::size_t i = 0; i < rs.grads.size(); ++i) equal = equal && rs.grads[i] == rp.grads[i];
    report("batch_gradients x16", ts, tp, equal);
  }
  return 0;
}
