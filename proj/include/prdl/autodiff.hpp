#ifndef PRDL_AUTODIFF_HPP
#define PRDL_AUTODIFF_HPP

#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "prdl/tensor.hpp"

namespace prdl::ad {

class Tape;

// Lightweight handle into a Tape node. Copyable; valid as long as the tape
// lives. A default-constructed Var is null and must not be used.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t idx) : tape_(tape), idx_(idx) {}

  const Tensor& value() const;
  std::size_t index() const { return idx_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t idx_ = 0;
};

// Eager reverse-mode tape. Each operation computes its forward value when
// built and records a closure implementing its backward rule; nodes are
// stored in construction order, which is a topological order of the graph.
// Rebuilding the same expression from the same inputs reproduces every
// forward value bit-identically.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor t);                 // requires_grad taken from the tensor
  Var constant(Tensor t);             // never receives gradient

  // Runs reverse-mode accumulation from a scalar root (seeded with 1).
  // Throws ShapeError if the root is not a scalar.
  void backward(Var root);

  const Tensor& value(std::size_t idx) const { return nodes_[idx].value; }
  bool wants_grad(std::size_t idx) const { return nodes_[idx].requires_grad; }
  bool node_requires_grad(Var v) const { return nodes_[v.index()].requires_grad; }

  // Gradient of the last backward() root w.r.t. this node. Throws if the
  // node does not carry a gradient.
  const Tensor& grad(Var v) const;
  Tensor& grad_mut(std::size_t idx) { return nodes_[idx].grad; }

  std::size_t node_count() const { return nodes_.size(); }

  // Internal: appends a computed node. Op builders capture the index the
  // node will get (node_count() before the call) inside their backward
  // closures. Not for direct use outside op implementations.
  Var emplace_node(Tensor value, bool requires_grad,
                   std::function<void(Tape&)> backward);

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated during backward for requires_grad nodes
    bool requires_grad = false;
    std::function<void(Tape&)> backward;
  };

  std::vector<Node> nodes_;
};

// ---- primitives -----------------------------------------------------------

Var add(Var a, Var b);        // same shape, or either side scalar
Var sub(Var a, Var b);
Var mul(Var a, Var b);        // Hadamard; either side may be scalar
Var scale(Var a, double c);
Var add_const(Var a, double c);
Var neg(Var a);

Var matvec(Var w, Var x);     // (r x c) * (c) -> (r)
Var matmul(Var a, Var b);     // (m x k) * (k x n) -> (m x n)

Var exp(Var a);
Var log(Var a);               // DomainError on non-positive input
Var sqrt(Var a);              // DomainError on non-positive input
Var abs(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var max_with(Var a, double c);

Var softmax(Var a);           // 1-D; stable (max-shifted)
Var logsumexp(Var a);         // 1-D -> scalar; stable

Var sum(Var a);               // -> scalar
Var mean(Var a);              // -> scalar
Var dot(Var a, Var b);        // 1-D pairs -> scalar

Var element(Var a, std::size_t i);             // -> scalar pick
Var row(Var a, std::size_t r);                 // 2-D -> 1-D row view
Var stack_scalars(Tape& t, const std::vector<Var>& xs);  // -> 1-D
Var broadcast(Var a, std::vector<std::size_t> shape);    // scalar -> shape

// ---- composites ------------------------------------------------------------

Var variance(Var a);          // population variance over all elements
Var l1_norm(Var a);           // sum |a_i|
Var linear(Var w, Var x, Var b);  // matvec(w, x) + b

// ---- parameter sets and gradient checking ----------------------------------

// Named ordered collection of parameter tensors. Order is the declaration
// order, which also fixes checkpoint serialization order.
class ParamSet {
 public:
  struct Item {
    std::string name;
    Tensor value;
  };

  Tensor& add(const std::string& name, Tensor t);
  bool has(const std::string& name) const;
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  std::vector<Item>& items() { return items_; }
  const std::vector<Item>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;

 private:
  std::vector<Item> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

using LeafMap = std::unordered_map<std::string, Var>;

// Builds a scalar expression over leaves created from a ParamSet.
using GraphBuilder = std::function<Var(Tape&, const LeafMap&)>;

struct EvalResult {
  double value = 0.0;
  std::map<std::string, Tensor> gradients;  // one entry per requires_grad param
};

// Forward value only (no tape gradients requested).
double evaluate_value(const GraphBuilder& build, const ParamSet& params);

// Forward + exact reverse-mode gradients for every parameter tensor whose
// requires_grad flag is set.
EvalResult evaluate_with_gradients(const GraphBuilder& build,
                                   const ParamSet& params);

struct GradCheckEntry {
  std::string param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;  // one per checked parameter
  double max_rel_err = 0.0;
  bool pass = false;
};

// Central-difference check (f(x+h) - f(x-h)) / 2h against the reverse-mode
// gradients; relative error uses denominator max(|a|, |n|, 1e-8). Throws
// DomainError for h <= 0 and ShapeError for a non-scalar expression.
GradCheckReport grad_check(const GraphBuilder& build, const ParamSet& params,
                           double h, double tolerance);

double relative_error(double a, double b);

}  // namespace prdl::ad

#endif  // PRDL_AUTODIFF_HPP
