#pragma once

// Tape-based reverse-mode automatic differentiation over float64 tensors.
//
// A Graph records every op applied to its Vars in creation order, so inputs
// of node k always have ids < k and backward walks the tape in reverse.
// Trainable parameters live in a ParamStore and enter a graph by reference;
// their gradients are read back into a GradBuffer after backward. A Graph is
// single-owner; separate graphs over the same (read-only) store may run in
// parallel.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sm2/tensor.hpp"

namespace sm2::ad {

inline constexpr double kLayerNormEps = 1e-5;

struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

/// Owns named parameters. Indices are stable for the life of the store.
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor init);
  std::size_t size() const { return params_.size(); }
  Parameter& at(std::size_t i) { return params_.at(i); }
  const Parameter& at(std::size_t i) const { return params_.at(i); }
  /// Index of the parameter called `name`; throws ContractError if absent.
  std::size_t index_of(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::size_t numel() const;
  std::size_t numel_with_prefix(const std::string& prefix) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
};

/// Per-parameter gradient accumulators shaped like a ParamStore.
class GradBuffer {
 public:
  GradBuffer() = default;
  explicit GradBuffer(const ParamStore& store);

  std::vector<double>& operator[](std::size_t i) { return grads_[i]; }
  const std::vector<double>& operator[](std::size_t i) const {
    return grads_[i];
  }
  std::size_t size() const { return grads_.size(); }

  void add(const GradBuffer& other);
  void scale(double s);
  double l2_norm() const;
  void zero();

 private:
  std::vector<std::vector<double>> grads_;
};

class Graph;

/// Handle to a node in a Graph.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  /// Gradient of the last backward() target w.r.t. this node (zeros if none).
  std::vector<double> grad() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Non-parameter leaf that receives a gradient (used for input grads).
  Var leaf(Tensor value);
  /// Parameter leaf by reference; frozen parameters enter as constants.
  Var param(const ParamStore& store, std::size_t index);
  Var param(const ParamStore& store, const std::string& name) {
    return param(store, store.index_of(name));
  }

  /// Appends an op result. `fn` may be empty for non-differentiable ops.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t input(std::size_t id, std::size_t slot) const {
    return nodes_[id].inputs[slot];
  }
  std::size_t num_inputs(std::size_t id) const {
    return nodes_[id].inputs.size();
  }
  /// Gradient buffer of node `id`, allocated (zeroed) on first use.
  std::vector<double>& grad(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  void backward(Var loss);
  /// Adds gradients of trainable parameter leaves into `out`.
  void accumulate_param_grads(GradBuffer& out) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor own;
    const Tensor* external = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::vector<double> grad;
    bool requires_grad = false;
    long param_index = -1;
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Ops. All operands must belong to the same graph. Matrices are rank-2 and a
// rank-1 tensor of length n is accepted wherever a 1 x n row is expected.

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// a[r,:] + row for every r.
Var add_row(Var a, Var row);
/// out[i*rows(b)+j, :] = a[i,:] + b[j,:]
Var outer_add(Var a, Var b);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
/// Gathers rows of `table` by id.
Var embedding(Var table, std::span<const std::size_t> ids);
Var layer_norm(Var x, Var gain, Var bias, double eps = kLayerNormEps);
/// Row-wise log-softmax over the last axis.
Var log_softmax(Var x);
/// Row-wise softmax restricted to entries where mask[r*cols+c] is true;
/// masked entries are exactly zero. Each row needs one visible entry.
Var masked_softmax(Var x, std::span<const bool> mask);
Var sum(Var a);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);

// ---------------------------------------------------------------------------

/// Worst relative error between analytic grads already stored in each
/// tensor's grad() and central differences (f(x+h) - f(x-h)) / 2h.
/// Relative error uses max(|analytic|, |numeric|, kGradCheckFloor) as the
/// denominator so exact zeros compare absolutely.
inline constexpr double kGradCheckFloor = 1e-6;
double grad_check(const std::function<double()>& f,
                  std::span<Tensor* const> params, double h = 1e-5);

double relative_error(double analytic, double numeric);

}  // namespace sm2::ad
