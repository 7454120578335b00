#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "sfcl/error.hpp"

namespace sfcl::metrics {

/// Fraction of correct decisions; prob >= threshold predicts positive.
inline double accuracy(std::span<const double> probs, std::span<const int> labels, double threshold = 0.5) {
  if (probs.size() != labels.size()) throw UsageError("accuracy: probs and labels differ in length");
  if (probs.empty()) throw UsageError("accuracy: empty input");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const int pred = probs[i] >= threshold ? 1 : 0;
    correct += pred == labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(probs.size());
}

/// ROC AUC in the Mann–Whitney form (concordant + ½·ties) / (P·N), computed
/// from midranks in O(n log n).
inline double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw UsageError("auc: scores and labels differ in length");
  std::size_t pos = 0;
  for (int l : labels) pos += l == 1 ? 1 : 0;
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw UsageError("auc: needs at least one positive and one negative label");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Ranks are 1-based; tied runs share their midrank (always a multiple of ½,
  // so the sum is exact in double).
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) pos_rank_sum += midrank;
    i = j;
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

}  // namespace sfcl::metrics
