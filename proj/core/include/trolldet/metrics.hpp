#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace trolldet {

struct ConfusionMatrix {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

struct ScoredExample {
  double score = 0.0;
  int label = 0;
};

/// Predicts positive iff score >= threshold.
ConfusionMatrix confusion(std::span<const ScoredExample> scored, double threshold);

/// Accuracy, precision, recall and F1. A zero denominator yields 0 and sets
/// the matching degenerate flag.
struct ClassificationMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_degenerate = false;
  bool recall_degenerate = false;
  bool f1_degenerate = false;

  bool degenerate() const { return precision_degenerate || recall_degenerate || f1_degenerate; }
};

ClassificationMetrics classification_metrics(const ConfusionMatrix& cm);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};
using RocCurve = std::vector<RocPoint>;

/// Threshold sweep over distinct scores, descending, from (0,0) to (1,1).
RocCurve roc_curve(std::span<const ScoredExample> scored);

/// Fraction of (positive, negative) pairs ranked correctly, ties counting 1/2.
double auc_pairwise(std::span<const ScoredExample> scored);
/// Trapezoidal area under a ROC curve.
double auc_trapezoid(const RocCurve& curve);
/// Pairwise AUC, cross-checked against the trapezoidal area (|diff| <= 1e-9).
double auc(std::span<const ScoredExample> scored);

struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  bool degenerate = false;
  ConfusionMatrix confusion;
};

constexpr double kDecisionThreshold = 0.5;

MetricsReport evaluate_scores(std::span<const ScoredExample> scored, double threshold = kDecisionThreshold);

}  // namespace trolldet
