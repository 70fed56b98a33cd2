#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "slmfuse/tensor.hpp"

namespace slmfuse {

/// Named trainable parameters with one gradient buffer each.
class ParamSet {
 public:
  struct Entry {
    Tensor value;
    Tensor grad;
    bool decay = true;  // decoupled weight decay applies
  };

  void add(const std::string& name, Tensor value, bool decay = true);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  Entry& entry(const std::string& name);
  const Entry& entry(const std::string& name) const;
  Tensor& value(const std::string& name) { return entry(name).value; }
  const Tensor& value(const std::string& name) const { return entry(name).value; }
  const Tensor& grad(const std::string& name) const { return entry(name).grad; }

  void accumulate_grad(const std::string& name, const Tensor& g, double scale = 1.0);
  void zero_grad();
  bool has_gradients() const noexcept { return grads_ready_; }
  void mark_gradients_ready() noexcept { grads_ready_ = true; }

  std::map<std::string, Entry>& entries() noexcept { return entries_; }
  const std::map<std::string, Entry>& entries() const noexcept { return entries_; }
  std::size_t scalar_count() const;

 private:
  std::map<std::string, Entry> entries_;
  bool grads_ready_ = false;
};

class Graph;

/// Handle to a node in a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  double item() const;
};

/// Tape for reverse-mode differentiation. Nodes are appended in evaluation
/// order; backward() walks them in reverse. Constants and non-differentiable
/// inputs never get gradient storage.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  explicit Graph(bool track_gradients = true);
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor t);
  // References `t` without copying; `t` must outlive the graph.
  Var constant_ref(const Tensor& t);
  Var input(Tensor t, bool differentiable);
  // Binds a parameter by reference. Gradients flow into `params` on backward.
  Var param(ParamSet& params, const std::string& name);

  const Tensor& value(Var v) const { return value(v.id); }
  const Tensor& value(std::size_t id) const;
  // Gradient of a differentiable input after backward().
  const Tensor& grad(Var v);

  void backward(Var loss, double seed = 1.0);

  std::size_t size() const noexcept { return nodes_.size(); }

  // Primitive construction; used by the op functions.
  Var push(Tensor value, std::vector<std::size_t> parents, const char* op,
           BackwardFn backward);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  Tensor& grad_buffer(std::size_t id);
  bool has_grad_storage(std::size_t id) const { return !nodes_[id].grad.empty(); }
  const std::vector<std::size_t>& parents(std::size_t id) const {
    return nodes_[id].parents;
  }

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    Tensor grad;
    std::vector<std::size_t> parents;
    const char* op = "";
    BackwardFn backward;
    bool requires_grad = false;
    ParamSet* sink = nullptr;
    std::string sink_name;
  };

  Var leaf(Node node);

  std::vector<Node> nodes_;
  bool track_ = true;
};

// Primitives. Binary elementwise ops broadcast `b` when it is 1x1, 1xN or Rx1.
namespace ad {

Var matmul(Var a, Var b);
Var matmul_bt(Var a, Var b);  // a * b^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var max_const(Var a, double c);
Var pow_const(Var a, double p);
Var sum(Var a);             // -> 1x1
Var mean(Var a);            // -> 1x1
Var sum_rows(Var a);        // reduce over rows -> 1xN
Var mean_rows(Var a);       // -> 1xN
Var mean_cols(Var a);       // reduce over last axis -> Rx1
Var softmax_rows(Var a);    // softmax over last axis
Var concat(const std::vector<Var>& parts, int axis);
Var slice(Var a, int axis, std::size_t start, std::size_t length);

// Composites built from the primitives above.
Var min_const(Var a, double c);
Var square(Var a);
Var layer_norm(Var x, Var gain, Var offset, double eps = 1e-5);
Var gelu(Var x);

}  // namespace ad

inline Var operator+(Var a, Var b) { return ad::add(a, b); }
inline Var operator-(Var a, Var b) { return ad::sub(a, b); }
inline Var operator*(Var a, Var b) { return ad::mul(a, b); }
inline Var operator*(Var a, double c) { return ad::scale(a, c); }
inline Var operator*(double c, Var a) { return ad::scale(a, c); }
inline Var operator+(Var a, double c) { return ad::add_scalar(a, c); }
inline Var operator-(Var a) { return ad::scale(a, -1.0); }

/// Builds the loss graph for one evaluation. Parameters must be bound with
/// Graph::param against the ParamSet passed in.
using Computation = std::function<Var(Graph&, ParamSet&)>;

/// Evaluates `computation`, accumulates d(loss)/d(param) * grad_scale into
/// `params` and returns the loss.
double eval_with_grads(const Computation& computation, ParamSet& params,
                       double grad_scale = 1.0);

/// Loss value only; no gradient is written.
double eval_loss(const Computation& computation, ParamSet& params);

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool pass = true;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps entries with vanishing
/// gradients from turning roundoff into huge relative errors.
double relative_error(double analytic, double numeric, double floor = 1e-4);

/// Central-difference check of the gradients already held in `analytic`
/// (same names/shapes as `params`). Leaves `params` values unchanged.
GradCheckReport finite_diff_check(const Computation& computation, ParamSet& params,
                                  const std::map<std::string, Tensor>& analytic,
                                  double h, double tol);

/// Computes analytic gradients with eval_with_grads, then checks them.
GradCheckReport finite_diff_check(const Computation& computation, ParamSet& params,
                                  double h, double tol);

}  // namespace slmfuse
