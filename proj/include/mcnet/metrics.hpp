#pragma once

#include <string>
#include <vector>

#include "mcnet/common.hpp"

namespace mcnet {

/// Labeled detector outputs: score = stego-class probability, label 0=cover
/// 1=stego. ROC-based metrics need at least one sample of each class.
struct ScoreSet {
  std::vector<double> scores;
  std::vector<int> labels;

  size_t size() const { return scores.size(); }
};

struct RocPoint {
  double fpr, tpr;
};

/// Threshold-sweep ROC curve; both coordinates non-decreasing, endpoints
/// (0,0) and (1,1) always present. Ties produce diagonal segments.
struct RocCurve {
  std::vector<RocPoint> points;
};

/// Minimum over thresholds of (P_FA + P_MD)/2 with the stego decision
/// score > tau; tau sweeps midpoints of consecutive distinct scores plus
/// the two extremes.
double pe_min(const ScoreSet& scores);

RocCurve roc(const ScoreSet& scores);

/// Trapezoidal area under the curve.
double auc(const RocCurve& curve);

/// Weighted AUC with TPR-region weights split at TPR = 0.4, normalized to
/// [0,1]. Default weighting follows the public reference scorer (weight 2 on
/// the region below 0.4); prose_weighting swaps the weights (2 above).
double wauc(const RocCurve& curve, bool prose_weighting = false);

struct MetricsReport {
  double pe = 0, auc = 0, wauc = 0;
  size_t n_cover = 0, n_stego = 0;
  RocCurve roc;

  std::string to_csv() const;  // metric,value rows
};

MetricsReport evaluate_scores(const ScoreSet& scores);

std::string roc_to_csv(const RocCurve& curve);  // fpr,tpr per line

}  // namespace mcnet
