#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfcl/error.hpp"

namespace cfcl {

// Mann-Whitney AUC: probability that a random positive outscores a random
// negative, ties counted as one half. Labels are 0/1.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DomainError("roc_auc: scores/labels length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw NumericError("roc_auc: non-finite score");
    if (labels[i] != 0 && labels[i] != 1) throw DomainError("roc_auc: labels must be 0 or 1");
    (labels[i] == 1 ? n_pos : n_neg) += 1;
  }
  if (n_pos == 0 || n_neg == 0) throw DomainError("roc_auc: both classes must be present");
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Walk tie groups in ascending order: each positive beats every negative
  // strictly below and half-beats the negatives in its own group.
  double wins = 0, neg_below = 0;
  for (std::size_t g = 0; g < order.size();) {
    std::size_t e = g;
    double pos = 0, neg = 0;
    while (e < order.size() && scores[order[e]] == scores[order[g]]) {
      (labels[order[e]] == 1 ? pos : neg) += 1;
      ++e;
    }
    wins += pos * neg_below + 0.5 * pos * neg;
    neg_below += neg;
    g = e;
  }
  return wins / (n_pos * n_neg);
}

struct MacroAucResult {
  double value = 0.0;
  std::vector<double> per_class;    // NaN for classes absent from labels
  std::vector<int> excluded_classes;
};

// Unweighted mean of one-vs-rest AUCs over classes present in `labels`.
// `scores` is row-major N x num_classes.
inline MacroAucResult macro_ovr_auc(std::span<const double> scores, std::span<const int> labels, int num_classes) {
  if (num_classes < 2) throw DomainError("macro_ovr_auc: need at least 2 classes");
  const std::size_t n = labels.size();
  if (scores.size() != n * static_cast<std::size_t>(num_classes)) throw DomainError("macro_ovr_auc: score matrix shape mismatch");
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw DomainError("macro_ovr_auc: label out of range");
    ++counts[static_cast<std::size_t>(y)];
  }
  const auto present = std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; });
  if (present < 2) throw DomainError("macro_ovr_auc: fewer than 2 classes present");

  MacroAucResult out;
  out.per_class.assign(static_cast<std::size_t>(num_classes), std::nan(""));
  std::vector<double> column(n);
  std::vector<int> binary(n);
  double sum = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) {
      out.excluded_classes.push_back(c);
      continue;
    }
    for (std::size_t i = 0; i < n; ++i) {
      column[i] = scores[i * static_cast<std::size_t>(num_classes) + static_cast<std::size_t>(c)];
      binary[i] = labels[i] == c ? 1 : 0;
    }
    out.per_class[static_cast<std::size_t>(c)] = roc_auc(column, binary);
    sum += out.per_class[static_cast<std::size_t>(c)];
  }
  out.value = sum / static_cast<double>(present);
  return out;
}

// Per-sample cross-entropy scaled by the weight of the true class, reduced
// as sum(w_i * ce_i) / sum(w_i).
inline double weighted_cross_entropy(std::span<const double> logits, std::span<const int> labels,
                                     std::span<const double> class_weights) {
  const std::size_t c = class_weights.size();
  if (c < 2) throw DomainError("weighted_cross_entropy: need at least 2 classes");
  if (logits.size() != labels.size() * c) throw DomainError("weighted_cross_entropy: logits shape mismatch");
  if (labels.empty()) throw DomainError("weighted_cross_entropy: empty batch");
  for (double w : class_weights)
    if (!(w > 0.0) || !std::isfinite(w)) throw DomainError("weighted_cross_entropy: class weights must be positive");
  double num = 0, den = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw DomainError("weighted_cross_entropy: label out of range");
    const double* row = logits.data() + i * c;
    double peak = -INFINITY;
    for (std::size_t k = 0; k < c; ++k) {
      if (!std::isfinite(row[k])) throw NumericError("weighted_cross_entropy: non-finite logits");
      peak = std::max(peak, row[k]);
    }
    double s = 0;
    for (std::size_t k = 0; k < c; ++k) s += std::exp(row[k] - peak);
    const double ce = peak + std::log(s) - row[y];
    num += class_weights[static_cast<std::size_t>(y)] * ce;
    den += class_weights[static_cast<std::size_t>(y)];
  }
  return num / den;
}

// Inverse class frequency, normalized to mean 1 over the classes present.
// Absent classes get weight 1 (they never contribute to the loss).
inline std::vector<double> inverse_frequency_weights(std::span<const int> labels, int num_classes) {
  std::vector<double> counts(static_cast<std::size_t>(num_classes), 0.0);
  for (int y : labels) counts.at(static_cast<std::size_t>(y)) += 1.0;
  std::vector<double> w(static_cast<std::size_t>(num_classes), 1.0);
  double total = 0;
  int present = 0;
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] > 0) {
      w[c] = 1.0 / counts[c];
      total += w[c];
      ++present;
    }
  if (present == 0) throw DomainError("inverse_frequency_weights: no labels");
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] > 0) w[c] *= present / total;
  return w;
}

struct MeanStderr {
  double mean = 0.0;
  std::optional<double> stderr_;  // absent with fewer than two values
  std::size_t n = 0;
};

inline MeanStderr mean_stderr(std::span<const double> values) {
  MeanStderr out;
  out.n = values.size();
  if (values.empty()) return out;
  double s = 0;
  for (double v : values) s += v;
  out.mean = s / static_cast<double>(values.size());
  if (values.size() >= 2) {
    double ss = 0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    const double var = ss / static_cast<double>(values.size() - 1);
    out.stderr_ = std::sqrt(var / static_cast<double>(values.size()));
  }
  return out;
}

}  // namespace cfcl
