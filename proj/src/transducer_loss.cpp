#include "sm2/transducer_loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sm2::rnnt {

double log_add(double a, double b) {
  if (a <= kLogZero) return b <= kLogZero ? kLogZero : b;
  if (b <= kLogZero) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

double log_mul(double a, double b) {
  if (a <= kLogZero || b <= kLogZero) return kLogZero;
  return a + b;
}

LatticeShape lattice_shape(const Tensor& log_probs,
                           std::span<const TokenId> target,
                           std::size_t frames) {
  LatticeShape s;
  s.labels = target.size();
  if (log_probs.rank() == 3) {
    s.frames = log_probs.shape()[0];
    if (log_probs.shape()[1] != s.labels + 1) {
      throw DimensionError("log_probs " + shape_to_string(log_probs.shape()) +
                           " does not match target length " +
                           std::to_string(s.labels));
    }
    s.outputs = log_probs.shape()[2];
  } else {
    s.frames = frames;
    s.outputs = log_probs.cols();
    if (frames == 0 || log_probs.rows() != frames * (s.labels + 1)) {
      throw DimensionError("log_probs " + shape_to_string(log_probs.shape()) +
                           " is not (T*(U+1)) x V for T=" +
                           std::to_string(frames) +
                           ", U=" + std::to_string(s.labels));
    }
  }
  for (TokenId y : target) {
    if (y == kBlank || y >= s.outputs) {
      throw ContractError("target token " + std::to_string(y) +
                          " outside vocabulary 1.." +
                          std::to_string(s.outputs - 1));
    }
  }
  return s;
}

LossLattice forward_backward(std::span<const double> lp,
                             const LatticeShape& shape,
                             std::span<const TokenId> target) {
  const std::size_t T = shape.frames, U = shape.labels, V = shape.outputs;
  const std::size_t cells = T * (U + 1);
  LossLattice lat;
  lat.shape = shape;
  lat.blank.resize(cells);
  lat.emit.assign(cells, kLogZero);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u <= U; ++u) {
      const std::size_t c = shape.cell(t, u);
      lat.blank[c] = lp[c * V + kBlank];
      if (u < U) lat.emit[c] = lp[c * V + target[u]];
    }
  }

  lat.alpha.assign(cells, kLogZero);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u <= U; ++u) {
      if (t == 0 && u == 0) {
        lat.alpha[0] = 0.0;
        continue;
      }
      double a = kLogZero;
      if (t > 0) {
        const std::size_t prev = shape.cell(t - 1, u);
        a = log_mul(lat.alpha[prev], lat.blank[prev]);
      }
      if (u > 0) {
        const std::size_t prev = shape.cell(t, u - 1);
        a = log_add(a, log_mul(lat.alpha[prev], lat.emit[prev]));
      }
      lat.alpha[shape.cell(t, u)] = a;
    }
  }
  const std::size_t last = shape.cell(T - 1, U);
  lat.log_likelihood = log_mul(lat.alpha[last], lat.blank[last]);

  lat.beta.assign(cells, kLogZero);
  for (std::size_t t = T; t-- > 0;) {
    for (std::size_t u = U + 1; u-- > 0;) {
      const std::size_t c = shape.cell(t, u);
      if (t == T - 1 && u == U) {
        lat.beta[c] = lat.blank[c];
        continue;
      }
      double b = kLogZero;
      if (t + 1 < T) b = log_mul(lat.beta[shape.cell(t + 1, u)], lat.blank[c]);
      if (u < U) {
        b = log_add(b, log_mul(lat.beta[shape.cell(t, u + 1)], lat.emit[c]));
      }
      lat.beta[c] = b;
    }
  }
  lat.log_likelihood_beta = lat.beta[0];
  return lat;
}

namespace {

Tensor gradient_from_lattice(const LossLattice& lat,
                             std::span<const TokenId> target,
                             const Shape& out_shape) {
  const auto& s = lat.shape;
  const std::size_t T = s.frames, U = s.labels, V = s.outputs;
  Tensor grad(out_shape);
  const double total = lat.log_likelihood;
  if (total <= kLogZero) {
    throw ContractError("transducer loss: target has zero probability");
  }
  auto occupancy = [&](double a, double step, double b) {
    const double v = log_mul(log_mul(a, step), b);
    return v <= kLogZero ? 0.0 : std::exp(v - total);
  };
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u <= U; ++u) {
      const std::size_t c = s.cell(t, u);
      const double a = lat.alpha[c];
      if (t + 1 < T) {
        grad[c * V + kBlank] =
            -occupancy(a, lat.blank[c], lat.beta[s.cell(t + 1, u)]);
      } else if (u == U) {
        grad[c * V + kBlank] = -occupancy(a, lat.blank[c], 0.0);
      }
      if (u < U) {
        grad[c * V + target[u]] =
            -occupancy(a, lat.emit[c], lat.beta[s.cell(t, u + 1)]);
      }
    }
  }
  return grad;
}

}  // namespace

double loss(const Tensor& log_probs, std::span<const TokenId> target,
            std::size_t frames) {
  const LatticeShape shape = lattice_shape(log_probs, target, frames);
  return -forward_backward(log_probs.values(), shape, target).log_likelihood;
}

Tensor loss_grad(const Tensor& log_probs, std::span<const TokenId> target,
                 std::size_t frames) {
  const LatticeShape shape = lattice_shape(log_probs, target, frames);
  const LossLattice lat = forward_backward(log_probs.values(), shape, target);
  return gradient_from_lattice(lat, target, log_probs.shape());
}

double brute_force_nll(const Tensor& log_probs,
                       std::span<const TokenId> target, std::size_t frames) {
  const LatticeShape s = lattice_shape(log_probs, target, frames);
  const std::size_t T = s.frames, U = s.labels, V = s.outputs;
  // Paths place U emits among the first T+U-1 moves; the last move is blank.
  const std::size_t moves = T + U - 1;
  double paths = 1.0;
  for (std::size_t i = 0; i < U; ++i) {
    paths = paths * static_cast<double>(moves - i) / static_cast<double>(i + 1);
  }
  if (paths > kMaxBruteForcePaths) {
    throw ContractError("brute_force_nll: " + std::to_string(paths) +
                        " alignments exceed the enumeration limit");
  }
  const auto lp = log_probs.values();
  // Enumerate move sequences as bitmasks over `moves` slots (bit set = emit).
  double total = kLogZero;
  std::vector<int> pattern(moves, 0);
  std::fill(pattern.end() - static_cast<std::ptrdiff_t>(U), pattern.end(), 1);
  do {
    std::size_t t = 0, u = 0;
    double path = 0.0;
    for (int m : pattern) {
      const std::size_t c = s.cell(t, u);
      if (m) {
        path = log_mul(path, lp[c * V + target[u]]);
        ++u;
      } else {
        path = log_mul(path, lp[c * V + kBlank]);
        ++t;
      }
    }
    path = log_mul(path, lp[s.cell(T - 1, U) * V + kBlank]);
    total = log_add(total, path);
  } while (std::next_permutation(pattern.begin(), pattern.end()));
  return -total;
}

ad::Var transducer_nll(ad::Var log_probs, std::size_t frames,
                       std::span<const TokenId> target) {
  const Tensor& lp = log_probs.value();
  const LatticeShape shape = lattice_shape(lp, target, frames);
  const LossLattice lat = forward_backward(lp.values(), shape, target);
  Tensor grad = gradient_from_lattice(lat, target, lp.shape());
  return log_probs.graph().record(
      Tensor({1}, {-lat.log_likelihood}), {log_probs},
      [grad = std::move(grad)](ad::Graph& g, std::size_t self) {
        const double d = g.grad(self)[0];
        auto& dx = g.grad(g.input(self, 0));
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += d * grad[i];
      });
}

}  // namespace sm2::rnnt
