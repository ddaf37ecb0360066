#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "ehrmamba/error.hpp"

namespace ehrmamba {

struct MetricsReport {
  double auroc = 0.0;
  double auprc = 0.0;
  double f1 = 0.0;
  double threshold = 0.5;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

namespace detail {

inline void check_binary(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("metrics: scores and labels differ in length");
  for (int y : labels) {
    if (y != 0 && y != 1) throw DataError("metrics: labels must be 0 or 1");
  }
}

inline std::vector<std::size_t> order_by_score(std::span<const double> scores, bool descending) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return descending ? scores[a] > scores[b] : scores[a] < scores[b];
  });
  return idx;
}

}  // namespace detail

// F1 predicting positive when score >= threshold; 0 when undefined.
inline double f1_score(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5) {
  detail::check_binary(scores, labels);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (pred && labels[i] == 1) ++tp;
    if (pred && labels[i] == 0) ++fp;
    if (!pred && labels[i] == 1) ++fn;
  }
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

// Probability that a random positive outscores a random negative, ties
// counted one half. Sort-based, O(n log n).
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_binary(scores, labels);
  const auto idx = detail::order_by_score(scores, false);
  double pos_total = 0.0, neg_total = 0.0, credit = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    double pos = 0.0, neg = 0.0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? pos : neg) += 1.0;
      ++j;
    }
    credit += pos * neg_total + 0.5 * pos * neg;
    pos_total += pos;
    neg_total += neg;
    i = j;
  }
  if (pos_total == 0.0 || neg_total == 0.0) throw DataError("auroc undefined: labels contain a single class");
  return credit / (pos_total * neg_total);
}

// Sum over distinct thresholds (descending) of recall increment times the
// precision at that threshold.
inline double auprc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_binary(scores, labels);
  const auto idx = detail::order_by_score(scores, true);
  double positives = 0.0;
  for (int y : labels) positives += y;
  if (positives == 0.0 || positives == static_cast<double>(labels.size())) {
    throw DataError("auprc undefined: labels contain a single class");
  }
  double tp = 0.0, fp = 0.0, prev_recall = 0.0, area = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? tp : fp) += 1.0;
      ++j;
    }
    const double recall = tp / positives;
    area += (recall - prev_recall) * tp / (tp + fp);
    prev_recall = recall;
    i = j;
  }
  return area;
}

inline MetricsReport compute_metrics(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5) {
  MetricsReport r;
  r.threshold = threshold;
  r.f1 = f1_score(scores, labels, threshold);
  for (int y : labels) (y == 1 ? r.n_pos : r.n_neg) += 1;
  r.auroc = auroc(scores, labels);
  r.auprc = auprc(scores, labels);
  return r;
}

}  // namespace ehrmamba
