#ifndef PRDL_METRICS_HPP
#define PRDL_METRICS_HPP

#include <cstddef>
#include <vector>

#include "prdl/autodiff.hpp"

namespace prdl::metrics {

// Rank-based ROC AUC with ties counted as one half. Requires at least one
// positive and one negative.
double binary_auc(const std::vector<double>& scores,
                  const std::vector<int>& is_positive);

// Micro-averaged one-vs-rest AUC: every (item, class) score is pooled into a
// single binary ranking problem.
double micro_auc(const ad::Tensor& probs /* n x C */,
                 const std::vector<int>& labels);

// Unweighted mean of per-class F1, with zero-division mapped to 0.
double macro_f1(const std::vector<int>& predicted,
                const std::vector<int>& truth, std::size_t num_classes);

double accuracy(const std::vector<int>& predicted,
                const std::vector<int>& truth);

struct Metrics {
  double auc = 0.0;
  double f1 = 0.0;
  double acc = 0.0;
};

}  // namespace prdl::metrics

#endif  // PRDL_METRICS_HPP
