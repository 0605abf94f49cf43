#pragma once

// Transducer negative log-likelihood over the T x (U+1) alignment lattice.
//
// log_probs[t, u, k] is the log-probability of output k (0 = blank) at frame
// t after the first u target tokens. A path starts at (0, 0), a blank moves
// t -> t+1, emitting y_{u+1} moves u -> u+1, and the path ends with the blank
// out of (T-1, U).

#include <cstddef>
#include <span>
#include <vector>

#include "sm2/autodiff.hpp"
#include "sm2/model.hpp"
#include "sm2/tensor.hpp"

namespace sm2::rnnt {

/// Stand-in for log(0); sums involving it stay at the sentinel.
inline constexpr double kLogZero = -1e30;

double log_add(double a, double b);
double log_mul(double a, double b);

/// View of log_probs laid out as [T][U+1][V+1].
struct LatticeShape {
  std::size_t frames = 0;   // T
  std::size_t labels = 0;   // U
  std::size_t outputs = 0;  // |Y| + 1
  std::size_t cell(std::size_t t, std::size_t u) const {
    return t * (labels + 1) + u;
  }
};

struct LossLattice {
  LatticeShape shape;
  std::vector<double> alpha;  // T x (U+1)
  std::vector<double> beta;   // T x (U+1)
  std::vector<double> blank;  // per-cell blank log-prob
  std::vector<double> emit;   // per-cell log-prob of the next target token
  double log_likelihood = 0.0;       // from alpha
  double log_likelihood_beta = 0.0;  // from beta, equal up to roundoff
};

/// Accepts a [T, U+1, V+1] tensor or a [T*(U+1), V+1] matrix with `frames`.
LatticeShape lattice_shape(const Tensor& log_probs,
                           std::span<const TokenId> target,
                           std::size_t frames = 0);

LossLattice forward_backward(std::span<const double> log_probs,
                             const LatticeShape& shape,
                             std::span<const TokenId> target);

double loss(const Tensor& log_probs, std::span<const TokenId> target,
            std::size_t frames = 0);

/// d NLL / d log_probs, same layout as log_probs.
Tensor loss_grad(const Tensor& log_probs, std::span<const TokenId> target,
                 std::size_t frames = 0);

/// Sums every alignment explicitly. Refuses instances with > 1e6 paths.
double brute_force_nll(const Tensor& log_probs,
                       std::span<const TokenId> target,
                       std::size_t frames = 0);

inline constexpr double kMaxBruteForcePaths = 1e6;

/// Graph op: scalar NLL of `target` given row-major lattice log-probs with
/// rows t * (U+1) + u. Backward applies loss_grad.
ad::Var transducer_nll(ad::Var log_probs, std::size_t frames,
                       std::span<const TokenId> target);

}  // namespace sm2::rnnt
