#include "prdl/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "prdl/kernels.hpp"

namespace prdl::ad {

const Tensor& Var::value() const { return tape_->value(idx_); }

Var Tape::emplace_node(Tensor value, bool requires_grad,
                       std::function<void(Tape&)> backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor t) {
  Node n;
  n.requires_grad = t.requires_grad();
  n.value = std::move(t);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor t) {
  t.set_requires_grad(false);
  return leaf(std::move(t));
}

void Tape::backward(Var root) {
  const Tensor& rv = value(root.index());
  if (!rv.is_scalar()) {
    throw ShapeError("backward: root must be scalar, got shape " +
                     ShapeError::format(rv.shape()));
  }
  for (Node& n : nodes_) {
    if (n.requires_grad) n.grad = Tensor::zeros(n.value.shape());
  }
  if (!nodes_[root.index()].requires_grad) return;  // all-constant expression
  nodes_[root.index()].grad[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backward) n.backward(*this);
  }
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_[v.index()];
  if (n.grad.size() == 0) {
    throw DomainError(
        "grad: node carries no gradient (constant, or backward not run)");
  }
  return n.grad;
}

namespace {

Tape& same_tape(Var a, Var b, const char* op) {
  if (a.tape() != b.tape()) {
    throw DomainError(std::string(op) + ": operands belong to different tapes");
  }
  return *a.tape();
}

enum class Bcast { None, LeftScalar, RightScalar };

Bcast binary_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.same_shape(b)) return Bcast::None;
  if (a.is_scalar()) return Bcast::LeftScalar;
  if (b.is_scalar()) return Bcast::RightScalar;
  throw ShapeError::mismatch(op, a.shape(), b.shape());
}

// Shared skeleton for elementwise unaries. dfdx sees (x, y).
Var unary(Var a, double (*fwd)(double), double (*dfdx)(double, double)) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  const std::size_t ai = a.index();
  const std::size_t si = t.node_count();
  const bool rg = t.wants_grad(ai);
  std::function<void(Tape&)> bwd;
  if (rg) {
    bwd = [ai, si, dfdx](Tape& tp) {
      const Tensor& g = tp.grad_mut(si);
      const Tensor& xv = tp.value(ai);
      const Tensor& yv = tp.value(si);
      Tensor& ga = tp.grad_mut(ai);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * dfdx(xv[i], yv[i]);
      }
    };
  }
  return t.emplace_node(std::move(out), rg, std::move(bwd));
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b, "add");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Bcast kind = binary_kind(av, bv, "add");
  Tensor out(kind == Bcast::LeftScalar ? bv.shape() : av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = kind == Bcast::LeftScalar ? av[0] : av[i];
    const double y = kind == Bcast::RightScalar ? bv[0] : bv[i];
    out[i] = x + y;
  }
  const std::size_t ai = a.index(), bi = b.index(), si = t.node_count();
  const bool rg = t.wants_grad(ai) || t.wants_grad(bi);
  std::function<void(Tape&)> bwd;
  if (rg) {
    bwd = [ai, bi, si, kind](Tape& tp) {
      const Tensor& g = tp.grad_mut(si);
      if (tp.wants_grad(ai)) {
        Tensor& ga = tp.grad_mut(ai);
        if (kind == Bcast::LeftScalar) {
          for (std::size_t i = 0; i < g.size(); ++i) ga[0] += g[i];
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
      }
      if (tp.wants_grad(bi)) {
        Tensor& gb = tp.grad_mut(bi);
        if (kind == Bcast::RightScalar) {
          for (std::size_t i = 0; i < g.size(); ++i) gb[0] += g[i];
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
      }
    };
  }
  return t.emplace_node(std::move(out), rg, std::move(bwd));
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b, "sub");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Bcast kind = binary_kind(av, bv, "sub");
  Tensor out(kind == Bcast::LeftScalar ? bv.shape() : av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = kind == Bcast::LeftScalar ? av[0] : av[i];
    const double y = kind == Bcast::RightScalar ? bv[0] : bv[i];
    out[i] = x - y;
  }
  const std::size_t ai = a.index(), bi = b.index(), si = t.node_count();
  const bool rg = t.wants_grad(ai) || t.wants_grad(bi);
  std::function<void(Tape&)> bwd;
  if (rg) {
    bwd = [ai, bi, si, kind](Tape& tp) {
      const Tensor& g = tp.grad_mut(si);
      if (tp.wants_grad(ai)) {
        Tensor& ga = tp.grad_mut(ai);
        if (kind == Bcast::LeftScalar) {
          for (std::size_t i = 0; i < g.size(); ++i) ga[0] += g[i];
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
      }
      if (tp.wants_grad(bi)) {
        Tensor& gb = tp.grad_mut(bi);
        if (kind == Bcast::RightScalar) {
          for (std::size_t i = 0; i < g.size(); ++i) gb[0] -= g[i];
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
      }
    };
  }
  return t.emplace_node(std::move(out), rg, std::move(bwd));
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b, "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Bcast kind = binary_kind(av, bv, "mul");
  Tensor out(kind == Bcast::LeftScalar ? bv.shape() : av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = kind == Bcast::LeftScalar ? av[0] : av[i];
    const double y = kind == Bcast::RightScalar ? bv[0] : bv[i];
    out[i] = x * y;
  }
  const std::size_t ai = a.index(), bi = b.index(), si = t.node_count();
  const bool rg = t.wants_grad(ai) || t.wants_grad(bi);
  std::function<void(Tape&)> bwd;
  if (rg) {
    bwd = [ai, bi, si, kind](Tape& tp) {
      const Tensor& g = tp.grad_mut(si);
      const Tensor& xv = tp.value(ai);
      const Tensor& yv = tp.value(bi);
      if (tp.wants_grad(ai)) {
        Tensor& ga = tp.grad_mut(ai);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double y = kind == Bcast::RightScalar ? yv[0] : yv[i];
          if (kind == Bcast::LeftScalar) {
            ga[0] += g[i] * y;
          } else {
            ga[i] += g[i] * y;
          }
        }
      }
      if (tp.wants_grad(bi)) {
        Tensor& gb = tp.grad_mut(bi);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double x = kind == Bcast::LeftScalar ? xv[0] : xv[i];
          if (kind == Bcast::RightScalar) {
            gb[0] += g[i] * x;
          } else {
            gb[i] += g[i] * x;
          }
        }
      }
    };
  }
  return t.emplace_node(std::move(out), rg, std::move(bwd));
}

Var scale(Var a, double c) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = c * av[i];
  const std::size_t ai = a.index(), si = t.node_count();
  const bool rg = t.wants_grad(ai);
  std::function<void(Tape&)> bwd;
  if (rg) {
    bwd = [ai, si, c](Tape& tp) {
      const Tensor& g = tp.grad_mut(si);
      Tensor& ga = tp.grad_mut(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    };
  }
  return t.emplace_node(std::move(out), rg, std::move(bwd));
}

Var add_const(Var a, double c) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + c;
  const std::size_t ai = a.index(), si = t.node_count();
  const bool rg = t.wants_grad(ai);
  std::function<void(Tape&)> bwd;
  if (rg) {
    bwd = [ai, si](Tape& tp) {
      const Tensor& g = tp.grad_mut(si);
      Tensor& ga = tp.grad_mut(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    };
  }
  return t.emplace_node(std::move(out), rg, std::move(bwd));
}

Var neg(Var a) { return scale(a, -1.0); }

Var matvec(Var w, Var x) {
  Tape& t = same_tape(w, x, "matvec");
  const Tensor& wv = w.value();
  const Tensor& xv = x.value();
  if (wv.rank() != 2 || xv.rank() != 1 || wv.cols() != xv.size()) {
    throw ShapeError::mismatch("matvec", wv.shape(), xv.shape());
  }
  const std::size_t rows = wv.rows(), cols = wv.cols();
  Tensor out({rows});
  kernels::matvec(wv.data(), xv.data(), out.data(), rows, cols);
  const std::size_t wi = w.index(), xi = x.index(), si = t.node_count();
  const bool rg = t.wants_grad(wi) || t.wants_grad(xi);
  std::function<void(Tape&)> bwd;
  if (rg) {
    bwd = [wi, xi, si, rows, cols](Tape& tp) {
      const Tensor& g = tp.grad_mut(si);
      if (tp.wants_grad(wi)) {
        kernels::matvec_bwd_weight(g.data(), tp.value(xi).data(),
                                   tp.grad_mut(wi).data(), rows, cols);
      }
      if (tp.wants_grad(xi)) {
        kernels::matvec_bwd_input(tp.value(wi).data(), g.data(),
                                  tp.grad_mut(xi).data(), rows, cols);
      }
    };
  }
  return t.emplace_node(std::move(out), rg, std::move(bwd));
}

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw ShapeError::mismatch("matmul", av.shape(), bv.shape());
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out({m, n});
  kernels::matmul(av.data(), bv.data(), out.data(), m, k, n);
  const std::size_t ai = a.index(), bi = b.index(), si = t.node_count();
  const bool rg = t.wants_grad(ai) || t.wants_grad(bi);
  std::function<void(Tape&)> bwd;
  if (rg) {
    bwd = [ai, bi, si, m, k, n](Tape& tp) {
      const Tensor& g = tp.grad_mut(si);
      const Tensor& av2 = tp.value(ai);
      const Tensor& bv2 = tp.value(bi);
      if (tp.wants_grad(ai)) {
        Tensor& ga = tp.grad_mut(ai);  // ga = g * b^T
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t kk = 0; kk < k; ++kk) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j)
              acc += g[i * n + j] * bv2[kk * n + j];
            ga[i * k + kk] += acc;
          }
      }
      if (tp.wants_grad(bi)) {
        Tensor& gb = tp.grad_mut(bi);  // gb = a^T * g
        for (std::size_t kk = 0; kk < k; ++kk)
          for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < m; ++i)
              acc += av2[i * k + kk] * g[i * n + j];
            gb[kk * n + j] += acc;
          }
      }
    };
  }
  return t.emplace_node(std::move(out), rg, std::move(bwd));
}

Var exp(Var a) {
  return unary(
      a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Var log(Var a) {
  const Tensor& av = a.value();
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (!(av[i] > 0.0)) {
      throw DomainError("log: non-positive argument " + std::to_string(av[i]) +
                        " at index " + std::to_string(i));
    }
  }
  return unary(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Var sqrt(Var a) {
  const Tensor& av = a.value();
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (!(av[i] > 0.0)) {
      throw DomainError("sqrt: non-positive argument " + std::to_string(av[i]) +
                        " at index " + std::to_string(i));
    }
  }
  return unary(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Var abs(Var a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        // Stable for both signs.
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) { return max_with(a, 0.0); }

Var max_with(Var a, double c) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::max(av[i], c);
  const std::size_t ai = a.index(), si = t.node_count();
  const bool rg = t.wants_grad(ai);
  std::function<void(Tape&)> bwd;
  if (rg) {
    bwd = [ai, si, c](Tape& tp) {
      const Tensor& g = tp.grad_mut(si);
      const Tensor& xv = tp.value(ai);
      Tensor& ga = tp.grad_mut(ai);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xv[i] > c) ga[i] += g[i];
      }
    };
  }
  return t.emplace_node(std::move(out), rg, std::move(bwd));
}

Var softmax(Var a) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  if (av.rank() != 1) {
    throw ShapeError("softmax: expected 1-D input, got shape " +
                     ShapeError::format(av.shape()));
  }
  double m = av[0];
  for (std::size_t i = 1; i < av.size(); ++i) m = std::max(m, av[i]);
  Tensor out(av.shape());
  double denom = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    out[i] = std::exp(av[i] - m);
    denom += out[i];
  }
  for (std::size_t i = 0; i < av.size(); ++i) out[i] /= denom;
  const std::size_t ai = a.index(), si = t.node_count();
  const bool rg = t.wants_grad(ai);
  std::function<void(Tape&)> bwd;
  if (rg) {
    bwd = [ai, si](Tape& tp) {
      const Tensor& g = tp.grad_mut(si);
      const Tensor& y = tp.value(si);
      Tensor& ga = tp.grad_mut(ai);
      double gy = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) gy += g[i] * y[i];
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += y[i] * (g[i] - gy);
      }
    };
  }
  return t.emplace_node(std::move(out), rg, std::move(bwd));
}

Var logsumexp(Var a) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  if (av.rank() != 1) {
    throw ShapeError("logsumexp: expected 1-D input, got shape " +
                     ShapeError::format(av.shape()));
  }
  double m = av[0];
  for (std::size_t i = 1; i < av.size(); ++i) m = std::max(m, av[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += std::exp(av[i] - m);
  Tensor out = Tensor::scalar(m + std::log(s));
  const std::size_t ai = a.index(), si = t.node_count();
  const bool rg = t.wants_grad(ai);
  std::function<void(Tape&)> bwd;
  if (rg) {
    bwd = [ai, si](Tape& tp) {
      const double g = tp.grad_mut(si)[0];
      const Tensor& xv = tp.value(ai);
      const double lse = tp.value(si)[0];
      Tensor& ga = tp.grad_mut(ai);
      for (std::size_t i = 0; i < xv.size(); ++i) {
        ga[i] += g * std::exp(xv[i] - lse);
      }
    };
  }
  return t.emplace_node(std::move(out), rg, std::move(bwd));
}

Var sum(Var a) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
  const std::size_t ai = a.index(), si = t.node_count();
  const bool rg = t.wants_grad(ai);
  std::function<void(Tape&)> bwd;
  if (rg) {
    bwd = [ai, si](Tape& tp) {
      const double g = tp.grad_mut(si)[0];
      Tensor& ga = tp.grad_mut(ai);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    };
  }
  return t.emplace_node(Tensor::scalar(s), rg, std::move(bwd));
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var dot(Var a, Var b) {
  Tape& t = same_tape(a, b, "dot");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) {
    throw ShapeError::mismatch("dot", av.shape(), bv.shape());
  }
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  const std::size_t ai = a.index(), bi = b.index(), si = t.node_count();
  const bool rg = t.wants_grad(ai) || t.wants_grad(bi);
  std::function<void(Tape&)> bwd;
  if (rg) {
    bwd = [ai, bi, si](Tape& tp) {
      const double g = tp.grad_mut(si)[0];
      const Tensor& xv = tp.value(ai);
      const Tensor& yv = tp.value(bi);
      if (tp.wants_grad(ai)) {
        Tensor& ga = tp.grad_mut(ai);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * yv[i];
      }
      if (tp.wants_grad(bi)) {
        Tensor& gb = tp.grad_mut(bi);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * xv[i];
      }
    };
  }
  return t.emplace_node(Tensor::scalar(s), rg, std::move(bwd));
}

Var element(Var a, std::size_t i) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  if (i >= av.size()) {
    throw DomainError("element: index " + std::to_string(i) +
                      " out of range for size " + std::to_string(av.size()));
  }
  const std::size_t ai = a.index(), si = t.node_count();
  const bool rg = t.wants_grad(ai);
  std::function<void(Tape&)> bwd;
  if (rg) {
    bwd = [ai, si, i](Tape& tp) {
      tp.grad_mut(ai)[i] += tp.grad_mut(si)[0];
    };
  }
  return t.emplace_node(Tensor::scalar(av[i]), rg, std::move(bwd));
}

Var row(Var a, std::size_t r) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  if (av.rank() != 2) {
    throw ShapeError("row: expected 2-D input, got shape " +
                     ShapeError::format(av.shape()));
  }
  if (r >= av.rows()) {
    throw DomainError("row: index " + std::to_string(r) +
                      " out of range for " + std::to_string(av.rows()) +
                      " rows");
  }
  const std::size_t cols = av.cols();
  Tensor out({cols});
  for (std::size_t j = 0; j < cols; ++j) out[j] = av.at2(r, j);
  const std::size_t ai = a.index(), si = t.node_count();
  const bool rg = t.wants_grad(ai);
  std::function<void(Tape&)> bwd;
  if (rg) {
    bwd = [ai, si, r, cols](Tape& tp) {
      const Tensor& g = tp.grad_mut(si);
      Tensor& ga = tp.grad_mut(ai);
      for (std::size_t j = 0; j < cols; ++j) ga[r * cols + j] += g[j];
    };
  }
  return t.emplace_node(std::move(out), rg, std::move(bwd));
}

Var stack_scalars(Tape& t, const std::vector<Var>& xs) {
  if (xs.empty()) throw DomainError("stack_scalars: empty input");
  Tensor out({xs.size()});
  bool rg = false;
  std::vector<std::size_t> parents(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].tape() != &t) {
      throw DomainError("stack_scalars: operand on a different tape");
    }
    const Tensor& v = xs[i].value();
    if (!v.is_scalar()) {
      throw ShapeError("stack_scalars: element " + std::to_string(i) +
                       " has shape " + ShapeError::format(v.shape()));
    }
    out[i] = v[0];
    parents[i] = xs[i].index();
    rg = rg || t.wants_grad(parents[i]);
  }
  const std::size_t si = t.node_count();
  std::function<void(Tape&)> bwd;
  if (rg) {
    bwd = [parents, si](Tape& tp) {
      const Tensor& g = tp.grad_mut(si);
      for (std::size_t i = 0; i < parents.size(); ++i) {
        if (tp.wants_grad(parents[i])) tp.grad_mut(parents[i])[0] += g[i];
      }
    };
  }
  return t.emplace_node(std::move(out), rg, std::move(bwd));
}

Var broadcast(Var a, std::vector<std::size_t> shape) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  if (!av.is_scalar()) {
    throw ShapeError("broadcast: expected scalar input, got shape " +
                     ShapeError::format(av.shape()));
  }
  Tensor out = Tensor::full(shape, av[0]);
  const std::size_t ai = a.index(), si = t.node_count();
  const bool rg = t.wants_grad(ai);
  std::function<void(Tape&)> bwd;
  if (rg) {
    bwd = [ai, si](Tape& tp) {
      const Tensor& g = tp.grad_mut(si);
      double s = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) s += g[i];
      tp.grad_mut(ai)[0] += s;
    };
  }
  return t.emplace_node(std::move(out), rg, std::move(bwd));
}

Var variance(Var a) {
  // Population variance over all elements: mean((a - mean(a))^2).
  Var m = mean(a);
  Var d = sub(a, m);
  return mean(mul(d, d));
}

Var l1_norm(Var a) { return sum(abs(a)); }

Var linear(Var w, Var x, Var b) { return add(matvec(w, x), b); }

// ---- ParamSet ---------------------------------------------------------------

Tensor& ParamSet::add(const std::string& name, Tensor t) {
  if (index_.count(name)) {
    throw DomainError("ParamSet: duplicate parameter '" + name + "'");
  }
  index_[name] = items_.size();
  items_.push_back({name, std::move(t)});
  return items_.back().value;
}

bool ParamSet::has(const std::string& name) const {
  return index_.count(name) != 0;
}

Tensor& ParamSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw DomainError("ParamSet: unknown parameter '" + name + "'");
  }
  return items_[it->second].value;
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw DomainError("ParamSet: unknown parameter '" + name + "'");
  }
  return items_[it->second].value;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& item : items_) n += item.value.size();
  return n;
}

// ---- evaluation and gradient checking ---------------------------------------

namespace {

Var build_checked(const GraphBuilder& build, Tape& tape, const LeafMap& leaves) {
  Var root = build(tape, leaves);
  if (!root.valid() || root.tape() != &tape) {
    throw DomainError("graph builder returned a var from a different tape");
  }
  if (!root.value().is_scalar()) {
    throw ShapeError("expression must reduce to a scalar, got shape " +
                     ShapeError::format(root.value().shape()));
  }
  return root;
}

}  // namespace

double evaluate_value(const GraphBuilder& build, const ParamSet& params) {
  Tape tape;
  LeafMap leaves;
  for (const auto& item : params.items()) {
    Tensor t = item.value;
    t.set_requires_grad(false);  // forward only
    leaves.emplace(item.name, tape.leaf(std::move(t)));
  }
  return build_checked(build, tape, leaves).value()[0];
}

EvalResult evaluate_with_gradients(const GraphBuilder& build,
                                   const ParamSet& params) {
  Tape tape;
  LeafMap leaves;
  for (const auto& item : params.items()) {
    leaves.emplace(item.name, tape.leaf(item.value));
  }
  Var root = build_checked(build, tape, leaves);
  tape.backward(root);
  EvalResult res;
  res.value = root.value()[0];
  for (const auto& item : params.items()) {
    if (item.value.requires_grad()) {
      const Var leaf = leaves.at(item.name);
      if (tape.node_requires_grad(root)) {
        res.gradients.emplace(item.name, tape.grad(leaf));
      } else {
        // Root independent of all parameters; gradients are zero.
        res.gradients.emplace(item.name, Tensor::zeros(item.value.shape()));
      }
    }
  }
  return res;
}

double relative_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

GradCheckReport grad_check(const GraphBuilder& build, const ParamSet& params,
                           double h, double tolerance) {
  if (!(h > 0.0)) {
    throw DomainError("grad_check: step h must be positive, got " +
                      std::to_string(h));
  }
  EvalResult base = evaluate_with_gradients(build, params);

  GradCheckReport report;
  report.pass = true;
  ParamSet work;
  for (const auto& item : params.items()) work.add(item.name, item.value);

  for (const auto& item : params.items()) {
    if (!item.value.requires_grad()) continue;
    const Tensor& analytic = base.gradients.at(item.name);
    Tensor& target = work.at(item.name);
    GradCheckEntry entry;
    entry.param = item.name;
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double orig = target[i];
      target[i] = orig + h;
      const double fp = evaluate_value(build, work);
      target[i] = orig - h;
      const double fm = evaluate_value(build, work);
      target[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double err = relative_error(analytic[i], numeric);
      if (err >= entry.max_rel_err) {
        entry.max_rel_err = err;
        entry.worst_index = i;
        entry.analytic = analytic[i];
        entry.numeric = numeric;
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    if (entry.max_rel_err > tolerance) report.pass = false;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace prdl::ad
