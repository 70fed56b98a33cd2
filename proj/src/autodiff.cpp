#include "slmfuse/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "slmfuse/error.hpp"

namespace slmfuse {

// ---------------------------------------------------------------- ParamSet

void ParamSet::add(const std::string& name, Tensor value, bool decay) {
  if (entries_.count(name)) {
    throw ValidationError("duplicate parameter name '" + name + "'");
  }
  value.require_finite("parameter '" + name + "'");
  Tensor grad(value.shape(), 0.0);
  entries_.emplace(name, Entry{std::move(value), std::move(grad), decay});
}

ParamSet::Entry& ParamSet::entry(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return it->second;
}

const ParamSet::Entry& ParamSet::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return it->second;
}

void ParamSet::accumulate_grad(const std::string& name, const Tensor& g, double scale) {
  Entry& e = entry(name);
  if (g.size() != e.grad.size()) {
    throw ValidationError("gradient for '" + name + "' has shape " + g.shape_string() +
                          ", parameter has " + e.value.shape_string());
  }
  g.require_finite("gradient of parameter '" + name + "'");
  for (std::size_t i = 0; i < g.size(); ++i) e.grad[i] += scale * g[i];
  grads_ready_ = true;
}

void ParamSet::zero_grad() {
  for (auto& [name, e] : entries_) e.grad.fill(0.0);
  grads_ready_ = false;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += e.value.size();
  return n;
}

// ------------------------------------------------------------------- Graph

const Tensor& Var::value() const { return graph->value(id); }

double Var::item() const {
  const Tensor& t = value();
  if (t.size() != 1) {
    throw ValidationError("item() on non-scalar tensor " + t.shape_string());
  }
  return t[0];
}

Graph::Graph(bool track_gradients) : track_(track_gradients) {}

Var Graph::leaf(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Graph::constant(Tensor t) {
  t.require_finite("constant");
  Node n;
  n.owned = std::move(t);
  n.op = "constant";
  return leaf(std::move(n));
}

Var Graph::constant_ref(const Tensor& t) {
  Node n;
  n.ref = &t;
  n.op = "constant";
  return leaf(std::move(n));
}

Var Graph::input(Tensor t, bool differentiable) {
  t.require_finite("input");
  Node n;
  n.owned = std::move(t);
  n.op = "input";
  n.requires_grad = differentiable && track_;
  return leaf(std::move(n));
}

Var Graph::param(ParamSet& params, const std::string& name) {
  ParamSet::Entry& e = params.entry(name);
  Node n;
  n.ref = &e.value;
  n.op = "param";
  n.requires_grad = track_;
  n.sink = &params;
  n.sink_name = name;
  return leaf(std::move(n));
}

const Tensor& Graph::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.ref ? *n.ref : n.owned;
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(value(id).shape(), 0.0);
  return n.grad;
}

const Tensor& Graph::grad(Var v) {
  Node& n = nodes_[v.id];
  if (n.op != std::string("input") || !n.requires_grad) {
    throw ValidationError("gradient requested for a node that is not a differentiable input");
  }
  return grad_buffer(v.id);
}

Var Graph::push(Tensor value, std::vector<std::size_t> parents, const char* op,
                BackwardFn backward) {
  value.require_finite(std::string("primitive '") + op + "'");
  Node n;
  n.owned = std::move(value);
  n.op = op;
  for (std::size_t p : parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(backward);
  return leaf(std::move(n));
}

void Graph::backward(Var loss, double seed) {
  if (value(loss.id).size() != 1) {
    throw ValidationError("backward() needs a scalar loss, got " +
                          value(loss.id).shape_string());
  }
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss.id)[0] += seed;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.sink) {
      n.sink->accumulate_grad(n.sink_name, n.grad);
    } else if (n.backward) {
      n.backward(*this, id);
      for (std::size_t p : n.parents) {
        const Node& pn = nodes_[p];
        if (pn.requires_grad && !pn.grad.all_finite()) {
          throw NumericalError(std::string("non-finite gradient through primitive '") +
                               n.op + "'");
        }
      }
    }
  }
}

// -------------------------------------------------------------- primitives

namespace ad {
namespace {

Graph& graph_of(Var a, Var b) {
  if (a.graph != b.graph || a.graph == nullptr) {
    throw ValidationError("operands belong to different graphs");
  }
  return *a.graph;
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw ValidationError(std::string(op) + ": shape mismatch " + a.shape_string() +
                        " vs " + b.shape_string());
}

enum class Bcast { Same, Scalar, Row, Col };

Bcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Bcast::Same;
  if (b.size() == 1) return Bcast::Scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::Row;
  if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::Col;
  shape_error(op, a, b);
}

inline std::size_t b_index(Bcast k, std::size_t i, std::size_t j, std::size_t cols) {
  switch (k) {
    case Bcast::Same: return i * cols + j;
    case Bcast::Scalar: return 0;
    case Bcast::Row: return j;
    case Bcast::Col: return i;
  }
  return 0;
}

enum class BinOp { Add, Sub, Mul };

Var binary(Var a, Var b, BinOp kind, const char* op) {
  Graph& g = graph_of(a, b);
  const Tensor& x = g.value(a);
  const Tensor& y = g.value(b);
  const Bcast bk = broadcast_kind(op, x, y);
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out = Tensor::matrix(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double u = x[i * c + j];
      const double v = y[b_index(bk, i, j, c)];
      out[i * c + j] = kind == BinOp::Add ? u + v : kind == BinOp::Sub ? u - v : u * v;
    }
  }
  return g.push(std::move(out), {a.id, b.id}, op, [bk, kind](Graph& g, std::size_t self) {
    const std::size_t ai = g.parents(self)[0], bi = g.parents(self)[1];
    const Tensor& gout = g.grad_buffer(self);
    const std::size_t r = gout.rows(), c = gout.cols();
    if (g.requires_grad(ai)) {
      Tensor& ga = g.grad_buffer(ai);
      const Tensor& y = g.value(bi);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          const double d = gout[i * c + j];
          ga[i * c + j] += kind == BinOp::Mul ? d * y[b_index(bk, i, j, c)] : d;
        }
      }
    }
    if (g.requires_grad(bi)) {
      Tensor& gb = g.grad_buffer(bi);
      const Tensor& x = g.value(ai);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          const double d = gout[i * c + j];
          const double contrib = kind == BinOp::Mul ? d * x[i * c + j]
                                 : kind == BinOp::Sub ? -d
                                                      : d;
          gb[b_index(bk, i, j, c)] += contrib;
        }
      }
    }
  });
}

// Elementwise op; `deriv(x, y)` is dy/dx given input x and output y.
template <class F, class D>
Var unary(Var a, const char* op, F f, D deriv) {
  Graph& g = *a.graph;
  const Tensor& x = g.value(a);
  Tensor out = Tensor::matrix(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return g.push(std::move(out), {a.id}, op, [deriv](Graph& g, std::size_t self) {
    const std::size_t ai = g.parents(self)[0];
    if (!g.requires_grad(ai)) return;
    const Tensor& x = g.value(ai);
    const Tensor& y = g.value(self);
    const Tensor& gy = g.grad_buffer(self);
    Tensor& gx = g.grad_buffer(ai);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += gy[i] * deriv(x[i], y[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& x = g.value(a);
  const Tensor& y = g.value(b);
  const std::size_t m = x.rows(), k = x.cols(), n = y.cols();
  if (y.rows() != k) shape_error("matmul", x, y);
  Tensor out = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      const double* yrow = y.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += xv * yrow[j];
    }
  }
  return g.push(std::move(out), {a.id, b.id}, "matmul", [m, k, n](Graph& g, std::size_t self) {
    const std::size_t ai = g.parents(self)[0], bi = g.parents(self)[1];
    const Tensor& gout = g.grad_buffer(self);
    if (g.requires_grad(ai)) {
      Tensor& ga = g.grad_buffer(ai);
      const Tensor& y = g.value(bi);
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = gout.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* yrow = y.data() + p * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * yrow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (g.requires_grad(bi)) {
      Tensor& gb = g.grad_buffer(bi);
      const Tensor& x = g.value(ai);
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = gout.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double xv = x[i * k + p];
          double* brow = gb.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) brow[j] += xv * grow[j];
        }
      }
    }
  });
}

Var matmul_bt(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& x = g.value(a);
  const Tensor& y = g.value(b);
  const std::size_t m = x.rows(), k = x.cols(), n = y.rows();
  if (y.cols() != k) shape_error("matmul_bt", x, y);
  Tensor out = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xrow = x.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* yrow = y.data() + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += xrow[p] * yrow[p];
      out[i * n + j] = acc;
    }
  }
  return g.push(std::move(out), {a.id, b.id}, "matmul_bt", [m, k, n](Graph& g, std::size_t self) {
    const std::size_t ai = g.parents(self)[0], bi = g.parents(self)[1];
    const Tensor& gout = g.grad_buffer(self);
    if (g.requires_grad(ai)) {
      Tensor& ga = g.grad_buffer(ai);
      const Tensor& y = g.value(bi);
      for (std::size_t i = 0; i < m; ++i) {
        double* arow = ga.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double d = gout[i * n + j];
          const double* yrow = y.data() + j * k;
          for (std::size_t p = 0; p < k; ++p) arow[p] += d * yrow[p];
        }
      }
    }
    if (g.requires_grad(bi)) {
      Tensor& gb = g.grad_buffer(bi);
      const Tensor& x = g.value(ai);
      for (std::size_t i = 0; i < m; ++i) {
        const double* xrow = x.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double d = gout[i * n + j];
          double* brow = gb.data() + j * k;
          for (std::size_t p = 0; p < k; ++p) brow[p] += d * xrow[p];
        }
      }
    }
  });
}

Var add(Var a, Var b) { return binary(a, b, BinOp::Add, "add"); }
Var sub(Var a, Var b) { return binary(a, b, BinOp::Sub, "sub"); }
Var mul(Var a, Var b) { return binary(a, b, BinOp::Mul, "mul"); }

Var scale(Var a, double c) {
  return unary(a, "scale", [c](double x) { return c * x; },
               [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary(a, "add_scalar", [c](double x) { return x + c; },
               [](double, double) { return 1.0; });
}

Var tanh(Var a) {
  return unary(a, "tanh", [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(a, "sigmoid", stable_sigmoid,
               [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(a, "exp", [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, "log", [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Var max_const(Var a, double c) {
  return unary(a, "max_const", [c](double x) { return x > c ? x : c; },
               [c](double x, double) { return x > c ? 1.0 : 0.0; });
}

Var pow_const(Var a, double p) {
  return unary(
      a, "pow",
      [p](double x) { return p == 2.0 ? x * x : std::pow(x, p); },
      [p](double x, double) {
        if (p == 0.0) return 0.0;
        if (p == 1.0) return 1.0;
        if (p == 2.0) return 2.0 * x;
        return p * std::pow(x, p - 1.0);
      });
}

Var sum(Var a) {
  Graph& g = *a.graph;
  const Tensor& x = g.value(a);
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return g.push(Tensor::scalar(acc), {a.id}, "sum", [](Graph& g, std::size_t self) {
    const std::size_t ai = g.parents(self)[0];
    if (!g.requires_grad(ai)) return;
    const double d = g.grad_buffer(self)[0];
    Tensor& gx = g.grad_buffer(ai);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += d;
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var sum_rows(Var a) {
  Graph& g = *a.graph;
  const Tensor& x = g.value(a);
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out = Tensor::matrix(1, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += x[i * c + j];
  return g.push(std::move(out), {a.id}, "sum_rows", [r, c](Graph& g, std::size_t self) {
    const std::size_t ai = g.parents(self)[0];
    if (!g.requires_grad(ai)) return;
    const Tensor& gy = g.grad_buffer(self);
    Tensor& gx = g.grad_buffer(ai);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += gy[j];
  });
}

Var mean_rows(Var a) {
  const double r = static_cast<double>(a.value().rows());
  return scale(sum_rows(a), 1.0 / r);
}

Var mean_cols(Var a) {
  Graph& g = *a.graph;
  const Tensor& x = g.value(a);
  const std::size_t r = x.rows(), c = x.cols();
  const double inv = 1.0 / static_cast<double>(c);
  Tensor out = Tensor::matrix(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += x[i * c + j];
    out[i] = acc * inv;
  }
  return g.push(std::move(out), {a.id}, "mean_cols", [r, c, inv](Graph& g, std::size_t self) {
    const std::size_t ai = g.parents(self)[0];
    if (!g.requires_grad(ai)) return;
    const Tensor& gy = g.grad_buffer(self);
    Tensor& gx = g.grad_buffer(ai);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += gy[i] * inv;
  });
}

Var softmax_rows(Var a) {
  Graph& g = *a.graph;
  const Tensor& x = g.value(a);
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out = Tensor::matrix(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    const double* xr = x.data() + i * c;
    double* yr = out.data() + i * c;
    double mx = xr[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      s += yr[j];
    }
    for (std::size_t j = 0; j < c; ++j) yr[j] /= s;
  }
  return g.push(std::move(out), {a.id}, "softmax", [r, c](Graph& g, std::size_t self) {
    const std::size_t ai = g.parents(self)[0];
    if (!g.requires_grad(ai)) return;
    const Tensor& y = g.value(self);
    const Tensor& gy = g.grad_buffer(self);
    Tensor& gx = g.grad_buffer(ai);
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += gy[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        gx[i * c + j] += y[i * c + j] * (gy[i * c + j] - dot);
    }
  });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ValidationError("concat of zero tensors");
  if (axis != 0 && axis != 1) throw ValidationError("concat axis must be 0 or 1");
  Graph& g = *parts.front().graph;
  const Tensor& first = g.value(parts.front());
  std::size_t rows = 0, cols = 0;
  std::vector<std::size_t> ids;
  for (Var p : parts) {
    const Tensor& t = graph_of(parts.front(), p).value(p);
    if (axis == 0) {
      if (t.cols() != first.cols()) shape_error("concat", first, t);
      rows += t.rows();
      cols = t.cols();
    } else {
      if (t.rows() != first.rows()) shape_error("concat", first, t);
      cols += t.cols();
      rows = t.rows();
    }
    ids.push_back(p.id);
  }
  Tensor out = Tensor::matrix(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& t = g.value(p);
    for (std::size_t i = 0; i < t.rows(); ++i)
      for (std::size_t j = 0; j < t.cols(); ++j) {
        if (axis == 0)
          out[(offset + i) * cols + j] = t[i * t.cols() + j];
        else
          out[i * cols + offset + j] = t[i * t.cols() + j];
      }
    offset += axis == 0 ? t.rows() : t.cols();
  }
  return g.push(std::move(out), std::move(ids), "concat", [axis, cols](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad_buffer(self);
    std::size_t offset = 0;
    for (std::size_t pid : g.parents(self)) {
      const Tensor& t = g.value(pid);
      const std::size_t tr = t.rows(), tc = t.cols();
      if (g.requires_grad(pid)) {
        Tensor& gt = g.grad_buffer(pid);
        for (std::size_t i = 0; i < tr; ++i)
          for (std::size_t j = 0; j < tc; ++j)
            gt[i * tc + j] += axis == 0 ? gy[(offset + i) * cols + j] : gy[i * cols + offset + j];
      }
      offset += axis == 0 ? tr : tc;
    }
  });
}

Var slice(Var a, int axis, std::size_t start, std::size_t length) {
  Graph& g = *a.graph;
  const Tensor& x = g.value(a);
  const std::size_t r = x.rows(), c = x.cols();
  const std::size_t extent = axis == 0 ? r : c;
  if ((axis != 0 && axis != 1) || length == 0 || start + length > extent) {
    throw ValidationError("slice [" + std::to_string(start) + ", " +
                          std::to_string(start + length) + ") out of range for " +
                          x.shape_string() + " along axis " + std::to_string(axis));
  }
  const std::size_t orows = axis == 0 ? length : r;
  const std::size_t ocols = axis == 0 ? c : length;
  Tensor out = Tensor::matrix(orows, ocols);
  for (std::size_t i = 0; i < orows; ++i)
    for (std::size_t j = 0; j < ocols; ++j)
      out[i * ocols + j] = axis == 0 ? x[(start + i) * c + j] : x[i * c + start + j];
  return g.push(std::move(out), {a.id}, "slice",
                [axis, start, orows, ocols, c](Graph& g, std::size_t self) {
                  const std::size_t ai = g.parents(self)[0];
                  if (!g.requires_grad(ai)) return;
                  const Tensor& gy = g.grad_buffer(self);
                  Tensor& gx = g.grad_buffer(ai);
                  for (std::size_t i = 0; i < orows; ++i)
                    for (std::size_t j = 0; j < ocols; ++j) {
                      const std::size_t src =
                          axis == 0 ? (start + i) * c + j : i * c + start + j;
                      gx[src] += gy[i * ocols + j];
                    }
                });
}

Var min_const(Var a, double c) { return -max_const(-a, -c); }

Var square(Var a) { return pow_const(a, 2.0); }

Var layer_norm(Var x, Var gain, Var offset, double eps) {
  Var centered = x - mean_cols(x);
  Var variance = mean_cols(square(centered));
  Var inv_std = pow_const(variance + eps, -0.5);
  return (centered * inv_std) * gain + offset;
}

Var gelu(Var x) {
  const double k = std::sqrt(2.0 / std::numbers::pi);
  Var inner = (x + 0.044715 * pow_const(x, 3.0)) * k;
  return (0.5 * x) * (tanh(inner) + 1.0);
}

}  // namespace ad

// ------------------------------------------------------------- evaluation

double eval_with_grads(const Computation& computation, ParamSet& params, double grad_scale) {
  Graph g;
  Var loss = computation(g, params);
  const double value = loss.item();
  g.backward(loss, grad_scale);
  params.mark_gradients_ready();
  return value;
}

double eval_loss(const Computation& computation, ParamSet& params) {
  Graph g(false);
  return computation(g, params).item();
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_diff_check(const Computation& computation, ParamSet& params,
                                  const std::map<std::string, Tensor>& analytic,
                                  double h, double tol) {
  if (!(h > 0.0)) throw ValidationError("finite-difference step must be positive");
  GradCheckReport report;
  for (auto& [name, entry] : params.entries()) {
    auto it = analytic.find(name);
    if (it == analytic.end() || it->second.size() != entry.value.size()) {
      throw ValidationError("no analytic gradient of matching shape for '" + name + "'");
    }
    GradCheckEntry res;
    res.name = name;
    for (std::size_t i = 0; i < entry.value.size(); ++i) {
      const double saved = entry.value[i];
      entry.value[i] = saved + h;
      const double up = eval_loss(computation, params);
      entry.value[i] = saved - h;
      const double down = eval_loss(computation, params);
      entry.value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = it->second[i];
      const double err = relative_error(a, numeric);
      if (i == 0 || err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_index = i;
        res.analytic = a;
        res.numeric = numeric;
      }
    }
    res.pass = res.max_rel_error < tol;
    report.max_rel_error = std::max(report.max_rel_error, res.max_rel_error);
    report.pass = report.pass && res.pass;
    report.entries.push_back(std::move(res));
  }
  return report;
}

GradCheckReport finite_diff_check(const Computation& computation, ParamSet& params,
                                  double h, double tol) {
  params.zero_grad();
  eval_with_grads(computation, params);
  std::map<std::string, Tensor> analytic;
  for (const auto& [name, entry] : params.entries()) analytic.emplace(name, entry.grad);
  params.zero_grad();
  return finite_diff_check(computation, params, analytic, h, tol);
}

}  // namespace slmfuse
