#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "sm2/autodiff.hpp"

using namespace sm2;
using namespace sm2::ad;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0,
                     double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Builds f from leaf tensors, runs backward once to fill grads, then compares
// against central differences over every leaf entry.
double check_op(std::vector<Tensor> inputs,
                const std::function<Var(Graph&, std::vector<Var>&)>& op,
                std::uint64_t seed) {
  // Random weights turn a tensor output into a scalar with a generic gradient.
  Tensor weights;
  auto eval = [&](bool with_grad) {
    Graph g;
    std::vector<Var> vars;
    for (auto& t : inputs) vars.push_back(g.leaf(t));
    Var out = op(g, vars);
    if (weights.size() != out.value().size()) {
      weights = random_tensor(out.shape(), seed + 99);
    }
    Var loss = sum(mul(out, g.constant(weights)));
    if (with_grad) {
      g.backward(loss);
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        inputs[i].grad() = vars[i].grad();
      }
    }
    return loss.value()[0];
  };
  eval(true);
  std::vector<Tensor*> ptrs;
  for (auto& t : inputs) ptrs.push_back(&t);
  return grad_check([&] { return eval(false); }, ptrs);
}

}  // namespace

TEST_CASE("matmul examples") {
  Graph g;
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  const Tensor b = random_tensor({3, 4}, 1);
  CHECK(matmul(g.constant(eye), g.constant(b)).value().storage() == b.storage());

  const Var c = matmul(g.constant(Tensor::matrix(2, 2, {1, 2, 3, 4})),
                       g.constant(Tensor::matrix(2, 1, {1, 1})));
  CHECK(c.value().storage() == std::vector<double>{3, 7});
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Graph g;
  const Var a = g.constant(Tensor({2, 3}));
  const Var b = g.constant(Tensor({2, 3}));
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2x3]") != msg.rfind("[2x3]"));
  }
}

TEST_CASE("log_softmax examples") {
  Graph g;
  const Var u = log_softmax(g.constant(Tensor({1, 3})));
  for (double v : u.value().values()) CHECK(v == doctest::Approx(std::log(1.0 / 3.0)));

  const Var big = log_softmax(g.constant(Tensor::matrix(1, 2, {1000.0, 0.0})));
  CHECK(big.value()[0] == doctest::Approx(0.0));
  CHECK(big.value()[1] == doctest::Approx(-1000.0));
  CHECK(std::isfinite(big.value()[1]));
}

TEST_CASE("layer_norm examples") {
  Graph g;
  const Var gain = g.constant(Tensor::matrix(1, 2, {1, 1}));
  const Var bias = g.constant(Tensor::matrix(1, 2, {0, 0}));
  const Var flat = layer_norm(g.constant(Tensor::matrix(1, 2, {5, 5})), gain, bias);
  CHECK(flat.value()[0] == 0.0);
  CHECK(flat.value()[1] == 0.0);
  const Var ln = layer_norm(g.constant(Tensor::matrix(1, 2, {1, 3})), gain, bias, 0.0);
  CHECK(ln.value()[0] == doctest::Approx(-1.0));
  CHECK(ln.value()[1] == doctest::Approx(1.0));
}

TEST_CASE("backward examples and contract") {
  Graph g;
  const Tensor w0 = random_tensor({2, 3}, 4);
  Var w = g.leaf(w0);
  g.backward(sum(w));
  for (double v : w.grad()) CHECK(v == 1.0);

  Graph h;
  Var x = h.leaf(w0);
  h.backward(sum(mul(x, x)));
  const auto gx = x.grad();
  for (std::size_t i = 0; i < gx.size(); ++i) CHECK(gx[i] == doctest::Approx(2 * w0[i]));

  Graph k;
  Var y = k.leaf(w0);
  CHECK_THROWS_AS(k.backward(y), ContractError);
}

TEST_CASE("grad_check is exact for a quadratic") {
  Tensor x = random_tensor({4}, 5);
  x.grad().resize(4);
  for (std::size_t i = 0; i < 4; ++i) x.grad()[i] = 2 * x[i] + 3;
  Tensor* params[] = {&x};
  const double err = grad_check(
      [&] {
        double s = 0.0;
        for (double v : x.values()) s += v * v + 3 * v;
        return s;
      },
      params);
  CHECK(err < 1e-9);
}

TEST_CASE("log_softmax NLL gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const double err = check_op(
        {random_tensor({3, 5}, seed, -3, 3)},
        [](Graph& g, std::vector<Var>& v) {
          Tensor pick({3, 5});
          pick.at(0, 1) = pick.at(1, 4) = pick.at(2, 0) = -1.0;
          return mul(log_softmax(v[0]), g.constant(pick));
        },
        seed);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("every op passes a gradient check over 10 seeds") {
  using Op = std::function<Var(Graph&, std::vector<Var>&)>;
  struct Case {
    const char* name;
    std::vector<Shape> shapes;
    Op op;
    double lo = -1.0, hi = 1.0;
  };
  const std::size_t ids[] = {2, 0, 2, 1};
  const std::vector<Case> cases = {
      {"matmul", {{3, 4}, {4, 2}}, [](Graph&, auto& v) { return matmul(v[0], v[1]); }},
      {"transpose", {{3, 4}}, [](Graph&, auto& v) { return transpose(v[0]); }},
      {"add", {{2, 3}, {2, 3}}, [](Graph&, auto& v) { return add(v[0], v[1]); }},
      {"sub", {{2, 3}, {2, 3}}, [](Graph&, auto& v) { return sub(v[0], v[1]); }},
      {"mul", {{2, 3}, {2, 3}}, [](Graph&, auto& v) { return mul(v[0], v[1]); }},
      {"scale", {{2, 3}}, [](Graph&, auto& v) { return scale(v[0], -1.7); }},
      {"add_row", {{4, 3}, {1, 3}}, [](Graph&, auto& v) { return add_row(v[0], v[1]); }},
      {"outer_add", {{3, 2}, {4, 2}}, [](Graph&, auto& v) { return outer_add(v[0], v[1]); }},
      {"sigmoid", {{2, 5}}, [](Graph&, auto& v) { return sigmoid(v[0]); }},
      {"tanh", {{2, 5}}, [](Graph&, auto& v) { return ad::tanh(v[0]); }},
      // Kept away from the kink so central differences are valid.
      {"relu", {{2, 5}}, [](Graph&, auto& v) { return relu(v[0]); }, 0.1, 1.0},
      {"relu_negative", {{2, 5}}, [](Graph&, auto& v) { return relu(v[0]); }, -1.0, -0.1},
      {"embedding", {{3, 4}}, [&](Graph&, auto& v) { return embedding(v[0], ids); }},
      {"layer_norm", {{3, 5}, {1, 5}, {1, 5}},
       [](Graph&, auto& v) { return layer_norm(v[0], v[1], v[2]); }},
      {"log_softmax", {{3, 4}}, [](Graph&, auto& v) { return log_softmax(v[0]); }},
      {"masked_softmax", {{3, 3}},
       [](Graph&, auto& v) {
         static const bool m[] = {true, false, false, true, true, false, true, true, true};
         return masked_softmax(v[0], m);
       }},
      {"sum", {{2, 3}}, [](Graph&, auto& v) { return sum(v[0]); }},
      {"slice_rows", {{5, 2}}, [](Graph&, auto& v) { return slice_rows(v[0], 1, 4); }},
      {"slice_cols", {{2, 5}}, [](Graph&, auto& v) { return slice_cols(v[0], 2, 5); }},
      {"concat_rows", {{2, 3}, {1, 3}},
       [](Graph&, auto& v) { return concat_rows(std::span<const Var>(v)); }},
      {"concat_cols", {{2, 3}, {2, 1}},
       [](Graph&, auto& v) { return concat_cols(std::span<const Var>(v)); }},
  };
  for (const auto& c : cases) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      std::vector<Tensor> inputs;
      for (std::size_t i = 0; i < c.shapes.size(); ++i) {
        inputs.push_back(random_tensor(c.shapes[i], seed * 7 + i, c.lo, c.hi));
      }
      const double err = check_op(inputs, c.op, seed);
      INFO(c.name << " seed " << seed);
      CHECK(err < 1e-6);
    }
  }
}

TEST_CASE("masked entries of masked_softmax are exactly zero") {
  Graph g;
  const bool m[] = {true, false, true, false};
  const Var s = masked_softmax(g.constant(random_tensor({2, 2}, 3)), m);
  CHECK(s.value()[1] == 0.0);
  CHECK(s.value()[3] == 0.0);
  CHECK(s.value()[0] == 1.0);
}

TEST_CASE("frozen parameters enter as constants") {
  ParamStore store;
  store.add("w", random_tensor({2, 2}, 1));
  store.add("frozen", random_tensor({2, 2}, 2));
  store.at(1).trainable = false;
  Graph g;
  Var loss = sum(mul(g.param(store, "w"), g.param(store, "frozen")));
  g.backward(loss);
  GradBuffer grads(store);
  g.accumulate_param_grads(grads);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(grads[0][i] == store.at(1).tensor[i]);
  }
  double frozen_norm = 0.0;
  for (double v : grads[1]) frozen_norm += std::abs(v);
  CHECK(frozen_norm == 0.0);
}
