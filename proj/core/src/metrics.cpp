#include <trolldet/metrics.hpp>

#include <trolldet/common.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace trolldet {
namespace {

struct ClassCounts {
  std::uint64_t positives = 0;
  std::uint64_t negatives = 0;
};

ClassCounts count_classes(std::span<const ScoredExample> scored) {
  ClassCounts c;
  for (const ScoredExample& s : scored) {
    if (!std::isfinite(s.score)) throw InputError("scores must be finite");
    if (s.label == 1) {
      ++c.positives;
    } else if (s.label == 0) {
      ++c.negatives;
    } else {
      throw InputError("labels must be 0 or 1");
    }
  }
  if (c.positives == 0 || c.negatives == 0) {
    throw InputError("ROC/AUC needs at least one positive and one negative example");
  }
  return c;
}

std::vector<ScoredExample> sorted_by_score(std::span<const ScoredExample> scored, bool descending) {
  std::vector<ScoredExample> v(scored.begin(), scored.end());
  if (descending) {
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  } else {
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.score < b.score; });
  }
  return v;
}

double ratio(std::uint64_t num, std::uint64_t den, bool& degenerate) {
  if (den == 0) {
    degenerate = true;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ConfusionMatrix confusion(std::span<const ScoredExample> scored, double threshold) {
  if (scored.empty()) throw InputError("confusion: no scored examples");
  ConfusionMatrix cm;
  for (const ScoredExample& s : scored) {
    const bool predicted = s.score >= threshold;
    if (s.label == 1) {
      predicted ? ++cm.tp : ++cm.fn;
    } else {
      predicted ? ++cm.fp : ++cm.tn;
    }
  }
  return cm;
}

ClassificationMetrics classification_metrics(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw InputError("classification_metrics: empty confusion matrix");
  ClassificationMetrics m;
  m.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
  m.precision = ratio(cm.tp, cm.tp + cm.fp, m.precision_degenerate);
  m.recall = ratio(cm.tp, cm.tp + cm.fn, m.recall_degenerate);
  if (m.precision_degenerate || m.recall_degenerate || m.precision + m.recall == 0.0) {
    m.f1_degenerate = true;
    m.f1 = 0.0;
  } else {
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  }
  return m;
}

RocCurve roc_curve(std::span<const ScoredExample> scored) {
  const ClassCounts counts = count_classes(scored);
  const std::vector<ScoredExample> v = sorted_by_score(scored, /*descending=*/true);
  RocCurve curve{{0.0, 0.0}};
  std::uint64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < v.size();) {
    const double threshold = v[i].score;
    for (; i < v.size() && v[i].score == threshold; ++i) {
      v[i].label == 1 ? ++tp : ++fp;
    }
    curve.push_back({static_cast<double>(fp) / static_cast<double>(counts.negatives),
                     static_cast<double>(tp) / static_cast<double>(counts.positives)});
  }
  return curve;
}

double auc_pairwise(std::span<const ScoredExample> scored) {
  const ClassCounts counts = count_classes(scored);
  const std::vector<ScoredExample> v = sorted_by_score(scored, /*descending=*/false);
  // Twice the Mann-Whitney count keeps every partial sum an exact integer.
  std::uint64_t twice_wins = 0;
  std::uint64_t negatives_below = 0;
  for (std::size_t i = 0; i < v.size();) {
    const double s = v[i].score;
    std::uint64_t pos = 0, neg = 0;
    for (; i < v.size() && v[i].score == s; ++i) v[i].label == 1 ? ++pos : ++neg;
    twice_wins += 2 * pos * negatives_below + pos * neg;
    negatives_below += neg;
  }
  return static_cast<double>(twice_wins) / (2.0 * static_cast<double>(counts.positives) *
                                            static_cast<double>(counts.negatives));
}

double auc_trapezoid(const RocCurve& curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2.0;
  }
  return area;
}

double auc(std::span<const ScoredExample> scored) {
  const double pairwise = auc_pairwise(scored);
  const double trapezoid = auc_trapezoid(roc_curve(scored));
  if (std::abs(pairwise - trapezoid) > 1e-9) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "auc: pairwise " << pairwise << " and trapezoidal " << trapezoid << " disagree";
    throw std::logic_error(msg.str());
  }
  return pairwise;
}

MetricsReport evaluate_scores(std::span<const ScoredExample> scored, double threshold) {
  MetricsReport r;
  r.confusion = confusion(scored, threshold);
  const ClassificationMetrics m = classification_metrics(r.confusion);
  r.accuracy = m.accuracy;
  r.precision = m.precision;
  r.recall = m.recall;
  r.f1 = m.f1;
  r.auc = auc(scored);
  r.degenerate = m.degenerate();
  return r;
}

}  // namespace trolldet
