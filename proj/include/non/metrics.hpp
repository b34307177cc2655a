#pragma once

// Area under the ROC curve via the rank-sum identity:
//   AUC = (sum of positive ranks - n1(n1+1)/2) / (n1 * n0)
// with average ranks over tied scores, so ties count one half. O(n log n).

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace non {

class MetricError : public std::runtime_error {
 public:
  explicit MetricError(const std::string& what) : std::runtime_error(what) {}
};

inline double auc(const std::vector<double>& scores, const std::vector<double>& labels) {
  if (scores.size() != labels.size()) {
    throw MetricError("auc: scores and labels differ in length");
  }
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (double y : labels) {
    if (y != 0.0 && y != 1.0) throw MetricError("auc: labels must be 0 or 1");
    if (y == 1.0) ++n_pos;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw MetricError("auc undefined: need at least one positive and one negative label");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // ranks are 1-based; every member of the tie group gets the average rank
    const double avg_rank = 0.5 * double(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1.0) pos_rank_sum += avg_rank;
    }
    i = j;
  }
  const double u = pos_rank_sum - 0.5 * double(n_pos) * double(n_pos + 1);
  return u / (double(n_pos) * double(n_neg));
}

}  // namespace non
