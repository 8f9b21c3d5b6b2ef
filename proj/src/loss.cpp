#include "prdl/loss.hpp"

#include <cmath>

namespace prdl::loss {

using ad::Tensor;
using ad::Var;

void LossConfig::validate() const {
  if (!(tau_s > 0.0) || !(tau_v > 0.0)) {
    throw DomainError("LossConfig: temperatures must be positive");
  }
  if (beta1 < 0.0 || beta2 < 0.0 || beta3 < 0.0) {
    throw DomainError("LossConfig: loss weights must be non-negative");
  }
  if (!(gamma > 0.0)) {
    throw DomainError("LossConfig: gamma must be positive");
  }
  if (!(center_momentum >= 0.0 && center_momentum < 1.0)) {
    throw DomainError("LossConfig: center momentum must be in [0, 1)");
  }
}

double cross_entropy(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError::mismatch("cross_entropy", a.shape(), b.shape());
  }
  double a_sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) a_sum += a[i];
  if (std::abs(a_sum - 1.0) > 1e-6) {
    throw DomainError("cross_entropy: target does not sum to 1 (sum = " +
                      std::to_string(a_sum) + ")");
  }
  double h = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b[i] <= 0.0) {
      throw DomainError("cross_entropy: non-positive probability " +
                        std::to_string(b[i]) + " at index " +
                        std::to_string(i));
    }
    h -= a[i] * std::log(std::max(b[i], kLogFloor));
  }
  return h;
}

double distillation_loss(const std::vector<Tensor>& teacher_probs,
                         const std::vector<Tensor>& student_probs,
                         const std::vector<Tensor>& sampled_probs) {
  const std::size_t t = teacher_probs.size();
  const std::size_t s = student_probs.size();
  if (t == 0 || s < 2) {
    throw DomainError("distillation_loss: need teacher views and >= 2 student "
                      "views");
  }
  if (sampled_probs.size() != t) {
    throw DomainError(
        "distillation_loss: sampled prob count " +
        std::to_string(sampled_probs.size()) +
        " does not match teacher view count " + std::to_string(t));
  }

  double image_term = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < s; ++j) {
      if (j == i) continue;  // same underlying crop
      image_term += cross_entropy(teacher_probs[i], student_probs[j]);
      ++pairs;
    }
  }
  image_term /= static_cast<double>(pairs);

  double sampled_term = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    sampled_term += cross_entropy(teacher_probs[i], sampled_probs[i]);
  }
  sampled_term /= static_cast<double>(t);

  return image_term + sampled_term;
}

double kl_loss(const model::ReprDistribution& dist, KlDirection direction) {
  const Tensor& mu = dist.mu;
  const Tensor& sigma = dist.sigma;
  if (!mu.same_shape(sigma)) {
    throw ShapeError::mismatch("kl_loss", mu.shape(), sigma.shape());
  }
  double kl = 0.0;
  for (std::size_t d = 0; d < mu.size(); ++d) {
    const double s = sigma[d];
    if (!(s > 0.0)) {
      throw DomainError("kl_loss: non-positive sigma " + std::to_string(s) +
                        " at dimension " + std::to_string(d));
    }
    const double m2 = mu[d] * mu[d];
    if (direction == KlDirection::PaperLiteral) {
      // KL(N(0,1) || N(mu, s^2)) per dimension.
      kl += std::log(s) + (1.0 + m2) / (2.0 * s * s) - 0.5;
    } else {
      // KL(N(mu, s^2) || N(0,1)) per dimension.
      kl += 0.5 * (s * s + m2 - 1.0) - std::log(s);
    }
  }
  return kl;
}

double sparsity_loss(const Tensor& m_p) {
  double s = 0.0;
  for (std::size_t i = 0; i < m_p.size(); ++i) s += std::abs(m_p[i]);
  return s;
}

double variance_loss(const Tensor& m_p, double gamma) {
  if (m_p.size() < 2) {
    throw DomainError("variance_loss: need at least 2 dimensions, got " +
                      std::to_string(m_p.size()));
  }
  if (!(gamma > 0.0)) {
    throw DomainError("variance_loss: gamma must be positive");
  }
  const double n = static_cast<double>(m_p.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < m_p.size(); ++i) mean += m_p[i];
  mean /= n;
  double var = 0.0;
  for (std::size_t i = 0; i < m_p.size(); ++i) {
    var += (m_p[i] - mean) * (m_p[i] - mean);
  }
  var /= n;
  return std::max(0.0, 1.0 - std::sqrt(var + gamma));
}

LossBreakdown total_loss(double ce, double kl, double sparsity,
                         double variance, const LossConfig& cfg) {
  LossBreakdown b;
  b.ce = ce;
  b.kl = kl;
  b.sparsity = sparsity;
  b.variance = variance;
  b.total = ce + cfg.beta1 * kl + cfg.beta2 * sparsity + cfg.beta3 * variance;
  return b;
}

Var xent_vs_softmax(ad::Tape& tape, const Tensor& target_probs, Var logits) {
  if (!target_probs.same_shape(logits.value())) {
    throw ShapeError::mismatch("xent_vs_softmax", target_probs.shape(),
                               logits.value().shape());
  }
  Var target = tape.constant(target_probs);
  return ad::sub(ad::logsumexp(logits), ad::dot(target, logits));
}

Var kl_graph(Var mu, Var log_var, KlDirection direction) {
  Var m2 = ad::mul(mu, mu);
  if (direction == KlDirection::PaperLiteral) {
    // sum_d [ s/2 + (1 + mu^2) exp(-s) / 2 - 1/2 ],  s = log sigma^2
    Var inv_var = ad::exp(ad::neg(log_var));
    Var second = ad::mul(ad::add_const(m2, 1.0), inv_var);
    Var per_dim = ad::add_const(
        ad::scale(ad::add(log_var, second), 0.5), -0.5);
    return ad::sum(per_dim);
  }
  // sum_d [ (exp(s) + mu^2 - 1 - s) / 2 ]
  Var per_dim = ad::scale(
      ad::add_const(ad::sub(ad::add(ad::exp(log_var), m2), log_var), -1.0),
      0.5);
  return ad::sum(per_dim);
}

Var sparsity_graph(Var m_p) { return ad::l1_norm(m_p); }

Var variance_hinge_graph(Var m_p, double gamma) {
  if (m_p.value().size() < 2) {
    throw DomainError("variance_hinge_graph: need at least 2 dimensions");
  }
  if (!(gamma > 0.0)) {
    throw DomainError("variance_hinge_graph: gamma must be positive");
  }
  Var sd = ad::sqrt(ad::add_const(ad::variance(m_p), gamma));
  return ad::relu(ad::add_const(ad::neg(sd), 1.0));
}

}  // namespace prdl::loss
