#include "mcnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace mcnet {

namespace {

void require_both_classes(const ScoreSet& s) {
  if (s.scores.size() != s.labels.size()) throw RuntimeFail("ScoreSet: scores/labels size mismatch");
  int64_t nc = 0, ns = 0;
  for (int l : s.labels) (l ? ns : nc) += 1;
  if (nc == 0 || ns == 0)
    throw RuntimeFail("ROC metrics need at least one sample of each class (got " +
                      std::to_string(nc) + " cover, " + std::to_string(ns) + " stego)");
}

}  // namespace

double pe_min(const ScoreSet& s) {
  require_both_classes(s);
  int64_t nc = 0, ns = 0;
  for (int l : s.labels) (l ? ns : nc) += 1;

  std::vector<std::pair<double, int>> sorted(s.size());
  for (size_t i = 0; i < s.size(); ++i) sorted[i] = {s.scores[i], s.labels[i]};
  std::sort(sorted.begin(), sorted.end());

  // tau = -inf: everything called stego
  int64_t fa = nc, md = 0;
  double best = 0.5 * (static_cast<double>(fa) / static_cast<double>(nc) +
                       static_cast<double>(md) / static_cast<double>(ns));
  size_t i = 0;
  while (i < sorted.size()) {
    size_t j = i;
    while (j < sorted.size() && sorted[j].first == sorted[i].first) {
      if (sorted[j].second)
        ++md;  // stego now below threshold: missed
      else
        --fa;  // cover now below threshold: no longer a false alarm
      ++j;
    }
    double pe = 0.5 * (static_cast<double>(fa) / static_cast<double>(nc) +
                       static_cast<double>(md) / static_cast<double>(ns));
    if (pe < best) best = pe;
    i = j;
  }
  return best;
}

RocCurve roc(const ScoreSet& s) {
  require_both_classes(s);
  int64_t nc = 0, ns = 0;
  for (int l : s.labels) (l ? ns : nc) += 1;

  std::vector<std::pair<double, int>> sorted(s.size());
  for (size_t i = 0; i < s.size(); ++i) sorted[i] = {s.scores[i], s.labels[i]};
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  RocCurve curve;
  curve.points.push_back({0.0, 0.0});
  int64_t tp = 0, fp = 0;
  size_t i = 0;
  while (i < sorted.size()) {
    size_t j = i;
    while (j < sorted.size() && sorted[j].first == sorted[i].first) {
      if (sorted[j].second)
        ++tp;
      else
        ++fp;
      ++j;
    }
    curve.points.push_back({static_cast<double>(fp) / static_cast<double>(nc),
                            static_cast<double>(tp) / static_cast<double>(ns)});
    i = j;
  }
  return curve;  // last point is (1,1) by construction
}

double auc(const RocCurve& curve) {
  double area = 0;
  for (size_t i = 1; i < curve.points.size(); ++i) {
    const RocPoint& a = curve.points[i - 1];
    const RocPoint& b = curve.points[i];
    area += (b.fpr - a.fpr) * 0.5 * (a.tpr + b.tpr);
  }
  return area;
}

double wauc(const RocCurve& curve, bool prose_weighting) {
  // Bands over TPR with a boundary at 0.4; the reference scorer weighs the
  // low band twice, the prose orientation swaps the weights.
  const double boundary = 0.4;
  const double w_low = prose_weighting ? 1.0 : 2.0;
  const double w_high = prose_weighting ? 2.0 : 1.0;
  const double normalization = w_low * boundary + w_high * (1.0 - boundary);

  auto band_area = [&](double y0, double y1) {
    // integral over fpr of clamp(tpr, y0, y1) - y0, segments split at the
    // boundary crossing first
    double area = 0;
    for (size_t i = 1; i < curve.points.size(); ++i) {
      RocPoint a = curve.points[i - 1];
      RocPoint b = curve.points[i];
      if (b.fpr <= a.fpr) continue;  // vertical segment: zero width
      std::vector<RocPoint> pieces = {a};
      if ((a.tpr < boundary && b.tpr > boundary) || (a.tpr > boundary && b.tpr < boundary)) {
        double t = (boundary - a.tpr) / (b.tpr - a.tpr);
        pieces.push_back({a.fpr + t * (b.fpr - a.fpr), boundary});
      }
      pieces.push_back(b);
      for (size_t p = 1; p < pieces.size(); ++p) {
        double x0 = pieces[p - 1].fpr, x1 = pieces[p].fpr;
        double c0 = std::min(std::max(pieces[p - 1].tpr, y0), y1) - y0;
        double c1 = std::min(std::max(pieces[p].tpr, y0), y1) - y0;
        area += (x1 - x0) * 0.5 * (c0 + c1);
      }
    }
    return area;
  };

  double total = w_low * band_area(0.0, boundary) + w_high * band_area(boundary, 1.0);
  return total / normalization;
}

MetricsReport evaluate_scores(const ScoreSet& scores) {
  MetricsReport r;
  r.pe = pe_min(scores);
  r.roc = roc(scores);
  r.auc = auc(r.roc);
  r.wauc = wauc(r.roc);
  for (int l : scores.labels) (l ? r.n_stego : r.n_cover) += 1;
  return r;
}

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  char buf[64];
  os << "metric,value\n";
  std::snprintf(buf, sizeof(buf), "%.9f", pe);
  os << "pe," << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.9f", auc);
  os << "auc," << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.9f", wauc);
  os << "wauc," << buf << "\n";
  os << "n_cover," << n_cover << "\n";
  os << "n_stego," << n_stego << "\n";
  return os.str();
}

std::string roc_to_csv(const RocCurve& curve) {
  std::ostringstream os;
  os << "fpr,tpr\n";
  char buf[96];
  for (const RocPoint& p : curve.points) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g", p.fpr, p.tpr);
    os << buf << "\n";
  }
  return os.str();
}

}  // namespace mcnet
