#include "sm2/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sm2/kernels.hpp"

namespace sm2::ad {

namespace k = sm2::kernels::parallel;

// ---------------------------------------------------------------------------
// ParamStore / GradBuffer

std::size_t ParamStore::add(std::string name, Tensor init) {
  if (contains(name)) throw ContractError("duplicate parameter name: " + name);
  params_.push_back({std::move(name), std::move(init), true});
  return params_.size() - 1;
}

std::size_t ParamStore::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw ContractError("unknown parameter: " + name);
}

bool ParamStore::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(),
                     [&](const Parameter& p) { return p.name == name; });
}

std::size_t ParamStore::numel() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

std::size_t ParamStore::numel_with_prefix(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.name.starts_with(prefix)) n += p.tensor.size();
  }
  return n;
}

GradBuffer::GradBuffer(const ParamStore& store) {
  grads_.reserve(store.size());
  for (const auto& p : store) grads_.emplace_back(p.tensor.size(), 0.0);
}

void GradBuffer::add(const GradBuffer& other) {
  if (other.grads_.size() != grads_.size()) {
    throw ContractError("GradBuffer::add: parameter count mismatch");
  }
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    auto& dst = grads_[i];
    const auto& src = other.grads_[i];
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
}

void GradBuffer::scale(double s) {
  for (auto& g : grads_) {
    for (auto& v : g) v *= s;
  }
}

double GradBuffer::l2_norm() const {
  double acc = 0.0;
  for (const auto& g : grads_) {
    for (double v : g) acc += v * v;
  }
  return std::sqrt(acc);
}

void GradBuffer::zero() {
  for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0);
}

// ---------------------------------------------------------------------------
// Var / Graph

const Tensor& Var::value() const { return graph_->value(id_); }

std::vector<double> Var::grad() const {
  if (graph_->has_grad(id_)) return graph_->grad(id_);
  return std::vector<double>(value().size(), 0.0);
}

Var Graph::constant(Tensor value) {
  Node n;
  n.own = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::leaf(Tensor value) {
  Node n;
  n.own = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::param(const ParamStore& store, std::size_t index) {
  const Parameter& p = store.at(index);
  Node n;
  n.external = &p.tensor;
  n.requires_grad = p.trainable;
  n.param_index = p.trainable ? static_cast<long>(index) : -1;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::initializer_list<Var> inputs,
                  BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(),
                                                       inputs.size()),
                std::move(fn));
}

Var Graph::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
#ifdef SM2_CHECK_FINITE
  if (!value.all_finite()) {
    throw NonFiniteError("non-finite value produced at node " +
                         std::to_string(nodes_.size()) + " with shape " +
                         shape_to_string(value.shape()));
  }
#endif
  Node n;
  n.own = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (&v.graph() != this) {
      throw ContractError("op mixes variables from different graphs");
    }
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

const Tensor& Graph::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.own;
}

std::vector<double>& Graph::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(value(id).size(), 0.0);
  return n.grad;
}

void Graph::backward(Var loss) {
  if (&loss.graph() != this) throw ContractError("backward: foreign variable");
  if (value(loss.id()).size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " +
                        shape_to_string(value(loss.id()).shape()));
  }
  if (backward_done_) throw ContractError("backward called twice on a graph");
  backward_done_ = true;
  grad(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, i);
  }
}

void Graph::accumulate_param_grads(GradBuffer& out) const {
  for (const Node& n : nodes_) {
    if (n.param_index < 0 || n.grad.empty()) continue;
    auto& dst = out[static_cast<std::size_t>(n.param_index)];
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += n.grad[j];
  }
}

// ---------------------------------------------------------------------------
// Ops

namespace {

Graph& same_graph(Var a, Var b) {
  if (&a.graph() != &b.graph()) {
    throw ContractError("op mixes variables from different graphs");
  }
  return a.graph();
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.size() != b.size() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

template <typename F, typename DF>
Var unary(Var a, F f, DF df_from_xy) {
  Graph& g = a.graph();
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return g.record(std::move(y), {a}, [df_from_xy](Graph& gr, std::size_t self) {
    const std::size_t in = gr.input(self, 0);
    if (!gr.requires_grad(in)) return;
    const Tensor& x = gr.value(in);
    const Tensor& y = gr.value(self);
    const auto& dy = gr.grad(self);
    auto& dx = gr.grad(in);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      dx[i] += dy[i] * df_from_xy(x[i], y[i]);
    }
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t m = av.rows(), kk = av.cols(), n = bv.cols();
  if (bv.rows() != kk) {
    throw DimensionError("matmul: inner dimensions differ, " +
                         shape_to_string(av.shape()) + " x " +
                         shape_to_string(bv.shape()));
  }
  Tensor c({m, n});
  k::gemm_nn(av.values(), bv.values(), c.values(), m, kk, n);
  return g.record(std::move(c), {a, b}, [m, kk, n](Graph& gr, std::size_t s) {
    const std::size_t ia = gr.input(s, 0), ib = gr.input(s, 1);
    const auto& dc = gr.grad(s);
    if (gr.requires_grad(ia)) {
      k::gemm_nt(dc, gr.value(ib).values(), gr.grad(ia), m, n, kk);
    }
    if (gr.requires_grad(ib)) {
      k::gemm_tn(gr.value(ia).values(), dc, gr.grad(ib), kk, m, n);
    }
  });
}

Var transpose(Var a) {
  const Tensor& x = a.value();
  const std::size_t r = x.rows(), c = x.cols();
  Tensor y({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) y[j * r + i] = x[i * c + j];
  }
  return a.graph().record(std::move(y), {a}, [r, c](Graph& gr, std::size_t s) {
    const std::size_t in = gr.input(s, 0);
    const auto& dy = gr.grad(s);
    auto& dx = gr.grad(in);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += dy[j * r + i];
    }
  });
}

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return g.record(std::move(y), {a, b}, [](Graph& gr, std::size_t s) {
    const auto& dy = gr.grad(s);
    for (std::size_t slot = 0; slot < 2; ++slot) {
      const std::size_t in = gr.input(s, slot);
      if (!gr.requires_grad(in)) continue;
      auto& dx = gr.grad(in);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
    }
  });
}

Var sub(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return g.record(std::move(y), {a, b}, [](Graph& gr, std::size_t s) {
    const auto& dy = gr.grad(s);
    const std::size_t ia = gr.input(s, 0), ib = gr.input(s, 1);
    if (gr.requires_grad(ia)) {
      auto& dx = gr.grad(ia);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
    }
    if (gr.requires_grad(ib)) {
      auto& dx = gr.grad(ib);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] -= dy[i];
    }
  });
}

Var mul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return g.record(std::move(y), {a, b}, [](Graph& gr, std::size_t s) {
    const auto& dy = gr.grad(s);
    const std::size_t ia = gr.input(s, 0), ib = gr.input(s, 1);
    if (gr.requires_grad(ia)) {
      const Tensor& bv = gr.value(ib);
      auto& dx = gr.grad(ia);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * bv[i];
    }
    if (gr.requires_grad(ib)) {
      const Tensor& av = gr.value(ia);
      auto& dx = gr.grad(ib);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  return unary(
      a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Var add_row(Var a, Var row) {
  Graph& g = same_graph(a, row);
  const Tensor& x = a.value();
  const Tensor& r = row.value();
  const std::size_t n = x.cols();
  if (r.size() != n) {
    throw DimensionError("add_row: row " + shape_to_string(r.shape()) +
                         " does not match columns of " +
                         shape_to_string(x.shape()));
  }
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += r[i % n];
  return g.record(std::move(y), {a, row}, [n](Graph& gr, std::size_t s) {
    const auto& dy = gr.grad(s);
    const std::size_t ia = gr.input(s, 0), ir = gr.input(s, 1);
    if (gr.requires_grad(ia)) {
      auto& dx = gr.grad(ia);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
    }
    if (gr.requires_grad(ir)) {
      auto& dr = gr.grad(ir);
      for (std::size_t i = 0; i < dy.size(); ++i) dr[i % n] += dy[i];
    }
  });
}

Var outer_add(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t ra = av.rows(), rb = bv.rows(), n = av.cols();
  if (bv.cols() != n) {
    throw DimensionError("outer_add: column mismatch " +
                         shape_to_string(av.shape()) + " vs " +
                         shape_to_string(bv.shape()));
  }
  Tensor y({ra * rb, n});
  for (std::size_t i = 0; i < ra; ++i) {
    for (std::size_t j = 0; j < rb; ++j) {
      double* yr = &y[(i * rb + j) * n];
      for (std::size_t c = 0; c < n; ++c) yr[c] = av[i * n + c] + bv[j * n + c];
    }
  }
  return g.record(std::move(y), {a, b}, [ra, rb, n](Graph& gr, std::size_t s) {
    const auto& dy = gr.grad(s);
    const std::size_t ia = gr.input(s, 0), ib = gr.input(s, 1);
    const bool ga = gr.requires_grad(ia), gb = gr.requires_grad(ib);
    std::vector<double>* da = ga ? &gr.grad(ia) : nullptr;
    std::vector<double>* db = gb ? &gr.grad(ib) : nullptr;
    for (std::size_t i = 0; i < ra; ++i) {
      for (std::size_t j = 0; j < rb; ++j) {
        const double* dr = &dy[(i * rb + j) * n];
        for (std::size_t c = 0; c < n; ++c) {
          if (da) (*da)[i * n + c] += dr[c];
          if (db) (*db)[j * n + c] += dr[c];
        }
      }
    }
  });
}

Var sigmoid(Var a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var embedding(Var table, std::span<const std::size_t> ids) {
  const Tensor& t = table.value();
  const std::size_t n = t.cols(), vocab = t.rows();
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  Tensor y({ids.size(), n});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= vocab) {
      throw DimensionError("embedding: id " + std::to_string(ids[r]) +
                           " outside table of " + std::to_string(vocab) +
                           " rows");
    }
    std::copy_n(&t[ids[r] * n], n, &y[r * n]);
  }
  std::vector<std::size_t> rows(ids.begin(), ids.end());
  return table.graph().record(
      std::move(y), {table},
      [rows = std::move(rows), n](Graph& gr, std::size_t s) {
        const auto& dy = gr.grad(s);
        auto& dt = gr.grad(gr.input(s, 0));
        for (std::size_t r = 0; r < rows.size(); ++r) {
          for (std::size_t c = 0; c < n; ++c) dt[rows[r] * n + c] += dy[r * n + c];
        }
      });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Graph& g = same_graph(x, gain);
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), n = xv.cols();
  if (gain.value().size() != n || bias.value().size() != n) {
    throw DimensionError("layer_norm: gain/bias must have " +
                         std::to_string(n) + " entries");
  }
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  Tensor y(xv.shape());
  // Cache normalized values and inverse std for backward.
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &xv[r * n];
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) mean += xr[c];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (xr[c] - mean) * inv;
      xhat[r * n + c] = h;
      y[r * n + c] = h * gv[c] + bv[c];
    }
  }
  return g.record(
      std::move(y), {x, gain, bias},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), rows, n](
          Graph& gr, std::size_t s) {
        const auto& dy = gr.grad(s);
        const std::size_t ix = gr.input(s, 0), ig = gr.input(s, 1),
                          ib = gr.input(s, 2);
        const Tensor& gv = gr.value(ig);
        if (gr.requires_grad(ig)) {
          auto& dg = gr.grad(ig);
          for (std::size_t i = 0; i < dy.size(); ++i) dg[i % n] += dy[i] * xhat[i];
        }
        if (gr.requires_grad(ib)) {
          auto& db = gr.grad(ib);
          for (std::size_t i = 0; i < dy.size(); ++i) db[i % n] += dy[i];
        }
        if (!gr.requires_grad(ix)) return;
        auto& dx = gr.grad(ix);
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_d = 0.0, mean_dh = 0.0;
          for (std::size_t c = 0; c < n; ++c) {
            const double d = dy[r * n + c] * gv[c];
            mean_d += d;
            mean_dh += d * xhat[r * n + c];
          }
          mean_d *= inv_n;
          mean_dh *= inv_n;
          for (std::size_t c = 0; c < n; ++c) {
            const double d = dy[r * n + c] * gv[c];
            dx[r * n + c] +=
                inv_std[r] * (d - mean_d - xhat[r * n + c] * mean_dh);
          }
        }
      });
}

Var log_softmax(Var x) {
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), n = xv.cols();
  Tensor y(xv.shape());
  k::log_softmax_rows(xv.values(), y.values(), rows, n);
  return x.graph().record(std::move(y), {x}, [rows, n](Graph& gr,
                                                       std::size_t s) {
    const Tensor& y = gr.value(s);
    const auto& dy = gr.grad(s);
    auto& dx = gr.grad(gr.input(s, 0));
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < n; ++c) total += dy[r * n + c];
      for (std::size_t c = 0; c < n; ++c) {
        dx[r * n + c] += dy[r * n + c] - std::exp(y[r * n + c]) * total;
      }
    }
  });
}

Var masked_softmax(Var x, std::span<const bool> mask) {
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), n = xv.cols();
  if (mask.size() != xv.size()) {
    throw DimensionError("masked_softmax: mask has " +
                         std::to_string(mask.size()) + " entries for " +
                         shape_to_string(xv.shape()));
  }
  Tensor y(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) {
      if (mask[r * n + c]) mx = std::max(mx, xv[r * n + c]);
    }
    if (!std::isfinite(mx)) {
      throw ContractError("masked_softmax: row " + std::to_string(r) +
                          " has no visible entry");
    }
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      if (!mask[r * n + c]) continue;
      const double e = std::exp(xv[r * n + c] - mx);
      y[r * n + c] = e;
      total += e;
    }
    for (std::size_t c = 0; c < n; ++c) y[r * n + c] /= total;
  }
  return x.graph().record(std::move(y), {x}, [rows, n](Graph& gr,
                                                       std::size_t s) {
    const Tensor& y = gr.value(s);
    const auto& dy = gr.grad(s);
    auto& dx = gr.grad(gr.input(s, 0));
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += y[r * n + c] * dy[r * n + c];
      for (std::size_t c = 0; c < n; ++c) {
        dx[r * n + c] += y[r * n + c] * (dy[r * n + c] - dot);
      }
    }
  });
}

Var sum(Var a) {
  const Tensor& x = a.value();
  double total = 0.0;
  for (double v : x.values()) total += v;
  return a.graph().record(Tensor({1}, {total}), {a},
                          [](Graph& gr, std::size_t s) {
                            const double d = gr.grad(s)[0];
                            for (auto& v : gr.grad(gr.input(s, 0))) v += d;
                          });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  const std::size_t n = x.cols();
  if (begin >= end || end > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") outside " +
                         shape_to_string(x.shape()));
  }
  Tensor y({end - begin, n});
  std::copy(&x[begin * n], &x[begin * n] + (end - begin) * n, &y[0]);
  return a.graph().record(std::move(y), {a}, [begin, n](Graph& gr,
                                                        std::size_t s) {
    const auto& dy = gr.grad(s);
    auto& dx = gr.grad(gr.input(s, 0));
    for (std::size_t i = 0; i < dy.size(); ++i) dx[begin * n + i] += dy[i];
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  const std::size_t rows = x.rows(), n = x.cols(), w = end - begin;
  if (begin >= end || end > n) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") outside " +
                         shape_to_string(x.shape()));
  }
  Tensor y({rows, w});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(&x[r * n + begin], w, &y[r * w]);
  }
  return a.graph().record(std::move(y), {a}, [rows, n, w, begin](
                                                 Graph& gr, std::size_t s) {
    const auto& dy = gr.grad(s);
    auto& dx = gr.grad(gr.input(s, 0));
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < w; ++c) dx[r * n + begin + c] += dy[r * w + c];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != n) {
      throw DimensionError("concat_rows: column mismatch " +
                           shape_to_string(p.shape()));
    }
    rows += p.rows();
  }
  Tensor y({rows, n});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const auto vals = p.value().values();
    std::copy(vals.begin(), vals.end(), &y[offset]);
    offset += vals.size();
  }
  return parts.front().graph().record(
      std::move(y), parts, [](Graph& gr, std::size_t s) {
        const auto& dy = gr.grad(s);
        std::size_t off = 0;
        for (std::size_t slot = 0; slot < gr.num_inputs(s); ++slot) {
          const std::size_t in = gr.input(s, slot);
          const std::size_t len = gr.value(in).size();
          if (gr.requires_grad(in)) {
            auto& dx = gr.grad(in);
            for (std::size_t i = 0; i < len; ++i) dx[i] += dy[off + i];
          }
          off += len;
        }
      });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t n = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row mismatch " +
                           shape_to_string(p.shape()));
    }
    n += p.cols();
  }
  Tensor y({rows, n});
  std::size_t col = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    const std::size_t w = v.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(&v[r * w], w, &y[r * n + col]);
    }
    col += w;
  }
  return parts.front().graph().record(
      std::move(y), parts, [rows, n](Graph& gr, std::size_t s) {
        const auto& dy = gr.grad(s);
        std::size_t col = 0;
        for (std::size_t slot = 0; slot < gr.num_inputs(s); ++slot) {
          const std::size_t in = gr.input(s, slot);
          const std::size_t w = gr.value(in).cols();
          if (gr.requires_grad(in)) {
            auto& dx = gr.grad(in);
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t c = 0; c < w; ++c) {
                dx[r * w + c] += dy[r * n + col + c];
              }
            }
          }
          col += w;
        }
      });
}

// ---------------------------------------------------------------------------

double relative_error(double analytic, double numeric) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / denom;
}

double grad_check(const std::function<double()>& f,
                  std::span<Tensor* const> params, double h) {
  double worst = 0.0;
  for (Tensor* p : params) {
    if (p->grad().size() != p->size()) {
      throw ContractError("grad_check: tensor has no analytic gradient");
    }
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double saved = (*p)[i];
      (*p)[i] = saved + h;
      const double up = f();
      (*p)[i] = saved - h;
      const double down = f();
      (*p)[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, relative_error(p->grad()[i], numeric));
    }
  }
  return worst;
}

}  // namespace sm2::ad
