#ifndef PRDL_TESTS_ORACLES_HPP
#define PRDL_TESTS_ORACLES_HPP

// Independent reference implementations used as test oracles. Everything in
// this header is forward-only arithmetic; nothing routes through the tape
// backward rules or the production loss/metric code it is used to check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "prdl/rng.hpp"

namespace prdl::oracle {

// Monte-Carlo estimate of KL(N(0,1) || N(mu, sigma^2)) per dimension.
inline double mc_kl_ref_first(double mu, double sigma, std::size_t samples,
                              Rng& rng) {
  double acc = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double x = rng.normal();
    const double diff = x - mu;
    acc += -0.5 * x * x + diff * diff / (2.0 * sigma * sigma) + std::log(sigma);
  }
  return acc / static_cast<double>(samples);
}

// Monte-Carlo estimate of KL(N(mu, sigma^2) || N(0,1)) per dimension.
inline double mc_kl_model_first(double mu, double sigma, std::size_t samples,
                                Rng& rng) {
  double acc = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double eps = rng.normal();
    const double x = mu + sigma * eps;
    acc += -0.5 * eps * eps - std::log(sigma) + 0.5 * x * x;
  }
  return acc / static_cast<double>(samples);
}

// Random probability vector (softmax of uniform logits).
inline std::vector<double> random_simplex(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  double m = -1e300;
  for (auto& x : v) {
    x = rng.uniform(-3.0, 3.0);
    m = std::max(m, x);
  }
  double denom = 0.0;
  for (auto& x : v) {
    x = std::exp(x - m);
    denom += x;
  }
  for (auto& x : v) x /= denom;
  return v;
}

inline double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double x : p) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

// Standard normal CDF.
inline double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

// Two-sided Kolmogorov-Smirnov test of a sample against the standard normal;
// returns the asymptotic p-value.
inline double ks_test_standard_normal(std::vector<double> sample) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double cdf = normal_cdf(sample[i]);
    const double lo = static_cast<double>(i) / n;
    const double hi = static_cast<double>(i + 1) / n;
    d = std::max({d, std::abs(cdf - lo), std::abs(cdf - hi)});
  }
  const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term =
        2.0 * std::pow(-1.0, k - 1) * std::exp(-2.0 * k * k * lambda * lambda);
    p += term;
    if (std::abs(term) < 1e-12) break;
  }
  return std::clamp(p, 0.0, 1.0);
}

// Pairwise one-vs-rest AUC with ties counted as one half.
inline double pairwise_auc(const std::vector<int>& is_positive,
                           const std::vector<double>& score) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < score.size(); ++i) {
    if (!is_positive[i]) continue;
    for (std::size_t j = 0; j < score.size(); ++j) {
      if (is_positive[j]) continue;
      ++pairs;
      if (score[i] > score[j]) {
        wins += 1.0;
      } else if (score[i] == score[j]) {
        wins += 0.5;
      }
    }
  }
  return pairs == 0 ? 0.5 : wins / static_cast<double>(pairs);
}

}  // namespace prdl::oracle

#endif  // PRDL_TESTS_ORACLES_HPP
