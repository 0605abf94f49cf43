#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "sm2/transducer_loss.hpp"
#include "sm2/verify.hpp"

using namespace sm2;
using namespace sm2::rnnt;

namespace {

Tensor uniform_lattice(std::size_t T, std::size_t U, std::size_t outputs) {
  Tensor t({T, U + 1, outputs});
  for (auto& v : t.values()) v = -std::log(static_cast<double>(outputs));
  return t;
}

std::vector<TokenId> random_target(std::mt19937_64& rng, std::size_t U,
                                   std::size_t vocab) {
  std::vector<TokenId> y(U);
  for (auto& t : y) t = static_cast<TokenId>(1 + rng() % vocab);
  return y;
}

double logsumexp(const std::vector<double>& xs) {
  double m = -1e300;
  for (double x : xs) m = std::max(m, x);
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

TEST_CASE("single frame, no tokens") {
  Tensor lp({1, 1, 3}, {std::log(0.2), std::log(0.5), std::log(0.3)});
  CHECK(loss(lp, {}) == doctest::Approx(-std::log(0.2)));
  CHECK(brute_force_nll(lp, {}) == doctest::Approx(-std::log(0.2)));
}

TEST_CASE("two frames, one token, uniform over three outputs") {
  const TokenId y[] = {1};
  const Tensor lp = uniform_lattice(2, 1, 3);
  CHECK(loss(lp, y) == doctest::Approx(-std::log(2.0 / 27.0)).epsilon(1e-14));
  CHECK(brute_force_nll(lp, y) == doctest::Approx(-std::log(2.0 / 27.0)).epsilon(1e-14));
}

TEST_CASE("certain blank path has zero loss") {
  Tensor lp({5, 1, 3});
  for (std::size_t t = 0; t < 5; ++t) {
    lp[t * 3] = 0.0;
    lp[t * 3 + 1] = lp[t * 3 + 2] = kLogZero;
  }
  CHECK(loss(lp, {}) == doctest::Approx(0.0));
}

TEST_CASE("loss equals alignment enumeration on 500 random instances") {
  std::mt19937_64 rng(42);
  for (int i = 0; i < 500; ++i) {
    const std::size_t T = 1 + rng() % 4, U = rng() % 4, vocab = 1 + rng() % 3;
    const auto y = random_target(rng, U, vocab);
    const Tensor lp = verify::random_log_probs(T, U, vocab + 1, rng());
    CHECK(std::abs(loss(lp, y) - brute_force_nll(lp, y)) < 1e-9);
  }
}

TEST_CASE("alpha and beta agree and every anti-diagonal carries unit mass") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 50; ++i) {
    const std::size_t T = 1 + rng() % 8, U = rng() % 6, vocab = 4;
    const auto y = random_target(rng, U, vocab);
    const Tensor lp = verify::random_log_probs(T, U, vocab + 1, rng());
    const LatticeShape shape = lattice_shape(lp, y);
    const LossLattice lat = forward_backward(lp.values(), shape, y);
    CHECK(lat.log_likelihood == doctest::Approx(lat.log_likelihood_beta).epsilon(1e-12));
    for (std::size_t d = 0; d + 1 <= T + U; ++d) {
      std::vector<double> terms;
      for (std::size_t t = 0; t < T; ++t) {
        if (d < t || d - t > U) continue;
        const std::size_t c = shape.cell(t, d - t);
        terms.push_back(lat.alpha[c] + lat.beta[c] - lat.log_likelihood);
      }
      CHECK(std::abs(logsumexp(terms)) < 1e-8);
    }
  }
}

TEST_CASE("appending certain-blank frames leaves the loss unchanged") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 30; ++i) {
    const std::size_t T = 1 + rng() % 4, U = rng() % 3, V = 3, pad = 1 + rng() % 3;
    const auto y = random_target(rng, U, V);
    const Tensor lp = verify::random_log_probs(T, U, V + 1, rng());
    Tensor padded({T + pad, U + 1, V + 1});
    std::copy(lp.values().begin(), lp.values().end(), padded.values().begin());
    for (std::size_t t = T; t < T + pad; ++t) {
      for (std::size_t u = 0; u <= U; ++u) {
        const std::size_t base = (t * (U + 1) + u) * (V + 1);
        padded[base] = 0.0;
        for (std::size_t k = 1; k <= V; ++k) padded[base + k] = kLogZero;
      }
    }
    CHECK(loss(padded, y) == doctest::Approx(loss(lp, y)).epsilon(1e-12));
  }
}

TEST_CASE("relabeling the vocabulary leaves the loss unchanged") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 30; ++i) {
    const std::size_t T = 1 + rng() % 4, U = rng() % 4, V = 3;
    const auto y = random_target(rng, U, V);
    const Tensor lp = verify::random_log_probs(T, U, V + 1, rng());
    std::vector<TokenId> perm = {0, 1, 2, 3};
    std::shuffle(perm.begin() + 1, perm.end(), rng);
    Tensor relabeled(lp.shape());
    for (std::size_t cell = 0; cell < T * (U + 1); ++cell)
      for (std::size_t k = 0; k <= V; ++k)
        relabeled[cell * (V + 1) + perm[k]] = lp[cell * (V + 1) + k];
    std::vector<TokenId> y2;
    for (auto t : y) y2.push_back(perm[t]);
    CHECK(loss(relabeled, y2) == doctest::Approx(loss(lp, y)).epsilon(1e-12));
    CHECK(brute_force_nll(relabeled, y2) == doctest::Approx(brute_force_nll(lp, y)).epsilon(1e-12));
  }
}

TEST_CASE("loss_grad matches finite differences and skips unused outputs") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::vector<TokenId> y = {2, 1};
    Tensor lp = verify::random_log_probs(3, 2, 3, seed);
    const Tensor g = loss_grad(lp, y);
    double worst = 0.0;
    for (std::size_t i = 0; i < lp.size(); ++i) {
      const double keep = lp[i];
      lp[i] = keep + 1e-5;
      const double up = loss(lp, y);
      lp[i] = keep - 1e-5;
      const double down = loss(lp, y);
      lp[i] = keep;
      worst = std::max(worst, ad::relative_error(g[i], (up - down) / 2e-5));
    }
    CHECK(worst < 1e-6);
    // Outputs that are neither blank nor the next target never get gradient.
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t u = 0; u <= 2; ++u) {
        for (std::size_t k = 1; k < 3; ++k) {
          if (u < 2 && k == y[u]) continue;
          CHECK(g[(t * 3 + u) * 3 + k] == 0.0);
        }
      }
    }
  }
}

TEST_CASE("matrix layout and graph op agree with the tensor API") {
  const std::vector<TokenId> y = {1, 3};
  const Tensor lp = verify::random_log_probs(4, 2, 4, 9);
  const Tensor flat = lp.reshaped({12, 4});
  CHECK(loss(flat, y, 4) == loss(lp, y));

  ad::Graph g;
  ad::Var x = g.leaf(flat);
  ad::Var nll = transducer_nll(x, 4, y);
  CHECK(nll.value()[0] == loss(lp, y));
  g.backward(nll);
  const Tensor expected = loss_grad(lp, y);
  const auto got = x.grad();
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == expected[i]);
}

TEST_CASE("contract errors") {
  const Tensor lp = uniform_lattice(2, 1, 3);
  const TokenId blank_target[] = {0};
  const TokenId out_of_vocab[] = {3};
  const TokenId too_long[] = {1, 1};
  CHECK_THROWS(loss(lp, blank_target));
  CHECK_THROWS(loss(lp, out_of_vocab));
  CHECK_THROWS_AS(loss(lp, too_long), DimensionError);
  const Tensor huge = uniform_lattice(30, 12, 3);
  std::vector<TokenId> y(12, 1);
  CHECK_THROWS_AS(brute_force_nll(huge, y), ContractError);
}

TEST_CASE("log-space helpers absorb the zero sentinel") {
  CHECK(log_add(kLogZero, kLogZero) == kLogZero);
  CHECK(log_add(kLogZero, -2.0) == doctest::Approx(-2.0));
  CHECK(log_mul(kLogZero, 5.0) == kLogZero);
  CHECK(log_add(std::log(0.25), std::log(0.5)) == doctest::Approx(std::log(0.75)));
}
