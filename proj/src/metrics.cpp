#include "prdl/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "prdl/errors.hpp"

namespace prdl::metrics {

double binary_auc(const std::vector<double>& scores,
                  const std::vector<int>& is_positive) {
  if (scores.size() != is_positive.size() || scores.empty()) {
    throw DomainError("binary_auc: size mismatch or empty input");
  }
  std::size_t n_pos = 0;
  for (int p : is_positive) n_pos += p ? 1 : 0;
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw DomainError("binary_auc: need both positive and negative items");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  // Average ranks across ties, then the Mann-Whitney identity.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() &&
           scores[order[j + 1]] == scores[order[i]]) {
      ++j;
    }
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) +
                                   static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k) {
      if (is_positive[order[k]]) rank_sum_pos += avg_rank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

double micro_auc(const ad::Tensor& probs, const std::vector<int>& labels) {
  if (probs.rank() != 2 || probs.rows() != labels.size()) {
    throw DomainError("micro_auc: probs must be n x C with one label per row");
  }
  const std::size_t n = probs.rows(), c = probs.cols();
  std::vector<double> scores;
  std::vector<int> is_pos;
  scores.reserve(n * c);
  is_pos.reserve(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      scores.push_back(probs.at2(i, k));
      is_pos.push_back(labels[i] == static_cast<int>(k) ? 1 : 0);
    }
  }
  return binary_auc(scores, is_pos);
}

double macro_f1(const std::vector<int>& predicted,
                const std::vector<int>& truth, std::size_t num_classes) {
  if (predicted.size() != truth.size() || predicted.empty()) {
    throw DomainError("macro_f1: size mismatch or empty input");
  }
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const bool pred_c = predicted[i] == static_cast<int>(c);
      const bool true_c = truth[i] == static_cast<int>(c);
      if (pred_c && true_c) ++tp;
      if (pred_c && !true_c) ++fp;
      if (!pred_c && true_c) ++fn;
    }
    const double denom = 2.0 * tp + fp + fn;
    f1_sum += denom > 0.0 ? 2.0 * tp / denom : 0.0;
  }
  return f1_sum / static_cast<double>(num_classes);
}

double accuracy(const std::vector<int>& predicted,
                const std::vector<int>& truth) {
  if (predicted.size() != truth.size() || predicted.empty()) {
    throw DomainError("accuracy: size mismatch or empty input");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predicted[i] == truth[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

}  // namespace prdl::metrics
