#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "prdl/autodiff.hpp"
#include "prdl/rng.hpp"

using namespace prdl;
using namespace prdl::ad;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Keeps elementwise inputs away from the relu/abs kinks so central
// differences stay valid.
Tensor random_smooth(Rng& rng, std::vector<std::size_t> shape) {
  Tensor t = random_tensor(rng, std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (std::abs(t[i]) < 0.05) t[i] += t[i] >= 0 ? 0.1 : -0.1;
  }
  return t;
}

}  // namespace

TEST_CASE("d/dx (x*x) at x=3 is 6") {
  ParamSet ps;
  ps.add("x", Tensor::scalar(3.0).set_requires_grad(true));
  auto res = evaluate_with_gradients(
      [](Tape&, const LeafMap& leaves) {
        Var x = leaves.at("x");
        return mul(x, x);
      },
      ps);
  CHECK(res.value == doctest::Approx(9.0));
  CHECK(res.gradients.at("x")[0] == doctest::Approx(6.0));
}

TEST_CASE("d/dx sigmoid(x) at x=0 is 0.25") {
  ParamSet ps;
  ps.add("x", Tensor::scalar(0.0).set_requires_grad(true));
  auto res = evaluate_with_gradients(
      [](Tape&, const LeafMap& leaves) { return sigmoid(leaves.at("x")); }, ps);
  CHECK(res.value == doctest::Approx(0.5));
  CHECK(res.gradients.at("x")[0] == doctest::Approx(0.25));
}

TEST_CASE("softmax cross-entropy gradient matches an independent oracle") {
  // The oracle is a plain forward-only reimplementation differentiated by
  // central differences; it never touches the tape's backward rules.
  Rng rng(123);
  const std::size_t p = 5;
  std::vector<double> logits(p), target(p);
  for (auto& v : logits) v = rng.uniform(-2.0, 2.0);
  double tsum = 0.0;
  for (auto& v : target) {
    v = rng.uniform(0.1, 1.0);
    tsum += v;
  }
  for (auto& v : target) v /= tsum;

  auto ce_forward = [&](const std::vector<double>& l) {
    double m = l[0];
    for (double v : l) m = std::max(m, v);
    double denom = 0.0;
    for (double v : l) denom += std::exp(v - m);
    double ce = 0.0;
    for (std::size_t i = 0; i < l.size(); ++i) {
      const double log_softmax = l[i] - m - std::log(denom);
      ce -= target[i] * log_softmax;
    }
    return ce;
  };

  ParamSet ps;
  ps.add("logits", Tensor::vector(logits).set_requires_grad(true));
  auto res = evaluate_with_gradients(
      [&](Tape& t, const LeafMap& leaves) {
        Var l = leaves.at("logits");
        Var a = t.constant(Tensor::vector(target));
        return neg(dot(a, log(softmax(l))));
      },
      ps);

  const double h = 1e-3;
  for (std::size_t i = 0; i < p; ++i) {
    auto lp = logits, lm = logits;
    lp[i] += h;
    lm[i] -= h;
    const double numeric = (ce_forward(lp) - ce_forward(lm)) / (2.0 * h);
    CHECK(relative_error(res.gradients.at("logits")[i], numeric) < 1e-4);
  }
}

TEST_CASE("every primitive passes central differences over 100 seeds") {
  struct Case {
    const char* name;
    GraphBuilder build;
  };
  const std::vector<Case> cases = {
      {"add", [](Tape&, const LeafMap& l) { return sum(add(l.at("a"), l.at("b"))); }},
      {"add_scalar_bcast",
       [](Tape&, const LeafMap& l) { return sum(add(l.at("a"), l.at("s"))); }},
      {"sub", [](Tape&, const LeafMap& l) { return sum(sub(l.at("a"), l.at("b"))); }},
      {"mul", [](Tape&, const LeafMap& l) { return sum(mul(l.at("a"), l.at("b"))); }},
      {"mul_scalar_bcast",
       [](Tape&, const LeafMap& l) { return sum(mul(l.at("a"), l.at("s"))); }},
      {"matvec",
       [](Tape&, const LeafMap& l) { return sum(matvec(l.at("w"), l.at("x4"))); }},
      {"matmul",
       [](Tape&, const LeafMap& l) { return sum(matmul(l.at("w"), l.at("m42"))); }},
      {"exp", [](Tape&, const LeafMap& l) { return sum(ad::exp(l.at("a"))); }},
      {"log", [](Tape&, const LeafMap& l) {
         return sum(ad::log(add_const(l.at("pos"), 0.5)));
       }},
      {"sqrt", [](Tape&, const LeafMap& l) {
         return sum(ad::sqrt(add_const(l.at("pos"), 0.5)));
       }},
      {"abs", [](Tape&, const LeafMap& l) { return sum(ad::abs(l.at("a"))); }},
      {"sigmoid",
       [](Tape&, const LeafMap& l) { return sum(sigmoid(l.at("a"))); }},
      {"tanh", [](Tape&, const LeafMap& l) { return sum(ad::tanh(l.at("a"))); }},
      {"relu", [](Tape&, const LeafMap& l) { return sum(relu(l.at("a"))); }},
      {"max_with",
       [](Tape&, const LeafMap& l) { return sum(max_with(l.at("a"), 0.3)); }},
      {"softmax", [](Tape&, const LeafMap& l) {
         return dot(softmax(l.at("a")), l.at("b"));
       }},
      {"logsumexp", [](Tape&, const LeafMap& l) { return logsumexp(l.at("a")); }},
      {"sum_sq", [](Tape&, const LeafMap& l) {
         Var s = sum(l.at("a"));
         return mul(s, s);
       }},
      {"mean_sq", [](Tape&, const LeafMap& l) {
         Var m = mean(l.at("a"));
         return mul(m, m);
       }},
      {"variance", [](Tape&, const LeafMap& l) { return variance(l.at("a")); }},
      {"l1_norm", [](Tape&, const LeafMap& l) { return l1_norm(l.at("a")); }},
      {"dot", [](Tape&, const LeafMap& l) { return dot(l.at("a"), l.at("b")); }},
      {"broadcast", [](Tape&, const LeafMap& l) {
         Var b = broadcast(l.at("s"), {6});
         return dot(b, l.at("a"));
       }},
      {"element_stack", [](Tape& t, const LeafMap& l) {
         Var e0 = element(l.at("a"), 0);
         Var e3 = element(l.at("a"), 3);
         Var stacked = stack_scalars(t, {e0, e3, l.at("s")});
         return sum(mul(stacked, stacked));
       }},
  };

  for (int seed = 0; seed < 100; ++seed) {
    Rng rng(1000 + seed);
    ParamSet ps;
    ps.add("a", random_smooth(rng, {6}).set_requires_grad(true));
    ps.add("b", random_smooth(rng, {6}).set_requires_grad(true));
    ps.add("s", random_smooth(rng, {1}).set_requires_grad(true));
    ps.add("pos", random_tensor(rng, {6}, 0.1, 2.0).set_requires_grad(true));
    ps.add("w", random_tensor(rng, {3, 4}).set_requires_grad(true));
    ps.add("x4", random_smooth(rng, {4}).set_requires_grad(true));
    ps.add("m42", random_tensor(rng, {4, 2}).set_requires_grad(true));
    for (const auto& c : cases) {
      auto report = grad_check(c.build, ps, 1e-3, 1e-4);
      if (!report.pass) {
        MESSAGE("primitive ", c.name, " seed ", seed, " max_rel_err ",
                report.max_rel_err);
      }
      REQUIRE(report.pass);
    }
  }
}

TEST_CASE("gradient of a sum equals the sum of gradients") {
  Rng rng(55);
  for (int trial = 0; trial < 20; ++trial) {
    ParamSet ps;
    ps.add("a", random_smooth(rng, {5}).set_requires_grad(true));
    GraphBuilder f = [](Tape&, const LeafMap& l) {
      return sum(mul(l.at("a"), sigmoid(l.at("a"))));
    };
    GraphBuilder g = [](Tape&, const LeafMap& l) {
      Var s = sum(ad::exp(scale(l.at("a"), 0.5)));
      return mul(s, s);
    };
    GraphBuilder fg = [&](Tape& t, const LeafMap& l) {
      return add(f(t, l), g(t, l));
    };
    auto rf = evaluate_with_gradients(f, ps);
    auto rg = evaluate_with_gradients(g, ps);
    auto rfg = evaluate_with_gradients(fg, ps);
    for (std::size_t i = 0; i < 5; ++i) {
      const double lhs = rfg.gradients.at("a")[i];
      const double rhs = rf.gradients.at("a")[i] + rg.gradients.at("a")[i];
      CHECK(relative_error(lhs, rhs) < 1e-12);
    }
  }
}

TEST_CASE("softmax outputs sum to 1 and are strictly positive") {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(16);
    Tensor logits = random_tensor(rng, {n}, -40.0, 40.0);
    Tape tape;
    Var out = softmax(tape.constant(logits));
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(out.value()[i] > 0.0);
      s += out.value()[i];
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("logsumexp agrees with log(sum(exp))") {
  Rng rng(17);
  Tensor x = random_tensor(rng, {8}, -3.0, 3.0);
  Tape tape;
  Var v = tape.constant(x);
  CHECK(logsumexp(v).value()[0] ==
        doctest::Approx(ad::log(sum(ad::exp(v))).value()[0]).epsilon(1e-12));
}

TEST_CASE("rebuilding an expression reproduces values bit-identically") {
  Rng rng(5);
  Tensor a = random_tensor(rng, {7});
  Tensor w = random_tensor(rng, {4, 7});
  auto build = [&]() {
    Tape tape;
    Var av = tape.constant(a);
    Var wv = tape.constant(w);
    return sum(softmax(ad::tanh(matvec(wv, av)))).value()[0];
  };
  const double v1 = build();
  const double v2 = build();
  CHECK(std::memcmp(&v1, &v2, sizeof(double)) == 0);
}

TEST_CASE("shape mismatch errors name both shapes") {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({3}));
  try {
    add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[3]") != std::string::npos);
  }
}

TEST_CASE("log and sqrt reject non-positive arguments") {
  Tape tape;
  Var neg_v = tape.constant(Tensor::vector({1.0, -0.5}));
  Var zero_v = tape.constant(Tensor::vector({0.0}));
  CHECK_THROWS_AS(ad::log(neg_v), DomainError);
  CHECK_THROWS_AS(ad::sqrt(zero_v), DomainError);
}

TEST_CASE("backward on a non-scalar root is rejected") {
  Tape tape;
  Tensor t = Tensor::vector({1.0, 2.0});
  t.set_requires_grad(true);
  Var v = tape.leaf(t);
  Var doubled = scale(v, 2.0);
  CHECK_THROWS_AS(tape.backward(doubled), ShapeError);
}

TEST_CASE("grad_check on x^2 at x=2 is nearly exact") {
  ParamSet ps;
  ps.add("x", Tensor::scalar(2.0).set_requires_grad(true));
  auto report = grad_check(
      [](Tape&, const LeafMap& l) {
        Var x = l.at("x");
        return mul(x, x);
      },
      ps, 1e-3, 1e-4);
  CHECK(report.pass);
  CHECK(report.max_rel_err < 1e-8);
}

TEST_CASE("grad_check with tolerance 0 fails cleanly on a nonlinear op") {
  ParamSet ps;
  ps.add("x", Tensor::scalar(0.7).set_requires_grad(true));
  auto report = grad_check(
      [](Tape&, const LeafMap& l) { return ad::exp(l.at("x")); }, ps, 1e-3,
      0.0);
  CHECK_FALSE(report.pass);
  CHECK(report.max_rel_err > 0.0);
  CHECK(report.entries.size() == 1);
}

TEST_CASE("grad_check rejects non-positive step") {
  ParamSet ps;
  ps.add("x", Tensor::scalar(1.0).set_requires_grad(true));
  CHECK_THROWS_AS(grad_check([](Tape&, const LeafMap& l) { return l.at("x"); },
                             ps, 0.0, 1e-4),
                  DomainError);
}

TEST_CASE("constants receive no gradient and do not break backward") {
  ParamSet ps;
  ps.add("x", Tensor::scalar(1.5).set_requires_grad(true));
  ps.add("frozen", Tensor::scalar(3.0));  // requires_grad defaults to false
  auto res = evaluate_with_gradients(
      [](Tape&, const LeafMap& l) { return mul(l.at("x"), l.at("frozen")); },
      ps);
  CHECK(res.value == doctest::Approx(4.5));
  CHECK(res.gradients.count("x") == 1);
  CHECK(res.gradients.count("frozen") == 0);
  CHECK(res.gradients.at("x")[0] == doctest::Approx(3.0));
}
