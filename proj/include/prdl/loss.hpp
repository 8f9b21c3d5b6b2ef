#ifndef PRDL_LOSS_HPP
#define PRDL_LOSS_HPP

#include <vector>

#include "prdl/autodiff.hpp"
#include "prdl/model.hpp"

namespace prdl::loss {

// Forward KL as written (reference Gaussian first) is the default; the
// conventional variational direction is available because the two closed
// forms differ.
enum class KlDirection { PaperLiteral, Conventional };

struct LossConfig {
  double tau_s = 0.1;
  double tau_v = 1.0;
  double beta1 = 0.001;  // KL weight
  double beta2 = 0.001;  // sparsity weight
  double beta3 = 1.0;    // variance-hinge weight
  double gamma = 1e-4;   // variance-hinge floor
  KlDirection kl_direction = KlDirection::PaperLiteral;
  bool center_teacher = true;
  double center_momentum = 0.9;

  void validate() const;
};

struct LossBreakdown {
  double ce = 0.0;
  double kl = 0.0;
  double sparsity = 0.0;
  double variance = 0.0;
  double total = 0.0;
};

inline constexpr double kLogFloor = 1e-12;

// ---- value-level operations --------------------------------------------------

// H(a, b) = -sum a_i log b_i, with b floored at 1e-12 inside the log.
// Throws DomainError if any b_i <= 0 or a does not sum to 1.
double cross_entropy(const ad::Tensor& a, const ad::Tensor& b);

// Mean over (teacher i, student j) pairs with j != i (the first
// teacher_count student views are the same underlying crops as the teacher
// views), plus the mean over i of H(y_t_i, y_v_i).
double distillation_loss(const std::vector<ad::Tensor>& teacher_probs,
                         const std::vector<ad::Tensor>& student_probs,
                         const std::vector<ad::Tensor>& sampled_probs);

double kl_loss(const model::ReprDistribution& dist, KlDirection direction);

// |m_p|_1; prompted-mask entries are positive so this is their sum.
double sparsity_loss(const ad::Tensor& m_p);

// max(0, 1 - sqrt(Var(m_p) + gamma)) with the population variance across
// the feature dimensions. Requires size >= 2 and gamma > 0.
double variance_loss(const ad::Tensor& m_p, double gamma);

LossBreakdown total_loss(double ce, double kl, double sparsity,
                         double variance, const LossConfig& cfg);

// ---- graph builders ----------------------------------------------------------

// H(a, softmax(l)) for a constant target a: logsumexp(l) - dot(a, l).
// Exact for sharpened logits; no probability floor needed.
ad::Var xent_vs_softmax(ad::Tape& tape, const ad::Tensor& target_probs,
                        ad::Var logits);

// KL between N(0, I) and N(mu, sigma^2) given the log-variance output s
// (sigma^2 = exp(s)), summed over dimensions.
ad::Var kl_graph(ad::Var mu, ad::Var log_var, KlDirection direction);

ad::Var sparsity_graph(ad::Var m_p);

ad::Var variance_hinge_graph(ad::Var m_p, double gamma);

}  // namespace prdl::loss

#endif  // PRDL_LOSS_HPP
