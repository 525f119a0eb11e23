#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mcnet/metrics.hpp"

using namespace mcnet;

namespace {

// O(n^2) threshold enumeration, structured independently from pe_min
double pe_bruteforce(const ScoreSet& s) {
  int64_t nc = 0, ns = 0;
  for (int l : s.labels) (l ? ns : nc) += 1;
  std::vector<double> sorted = s.scores;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> taus = {sorted.front() - 1.0, sorted.back() + 1.0};
  for (size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i] != sorted[i - 1]) taus.push_back(0.5 * (sorted[i] + sorted[i - 1]));
  double best = 1.0;
  for (double tau : taus) {
    int64_t fa = 0, md = 0;
    for (size_t i = 0; i < s.size(); ++i) {
      bool called_stego = s.scores[i] > tau;
      if (!s.labels[i] && called_stego) ++fa;
      if (s.labels[i] && !called_stego) ++md;
    }
    double pe = 0.5 * (static_cast<double>(fa) / static_cast<double>(nc) +
                       static_cast<double>(md) / static_cast<double>(ns));
    best = std::min(best, pe);
  }
  return best;
}

double auc_mann_whitney(const ScoreSet& s) {
  double u = 0;
  int64_t nc = 0, ns = 0;
  for (size_t i = 0; i < s.size(); ++i) {
    if (!s.labels[i]) continue;
    for (size_t j = 0; j < s.size(); ++j) {
      if (s.labels[j]) continue;
      if (s.scores[i] > s.scores[j])
        u += 1.0;
      else if (s.scores[i] == s.scores[j])
        u += 0.5;
    }
  }
  for (int l : s.labels) (l ? ns : nc) += 1;
  return u / (static_cast<double>(ns) * static_cast<double>(nc));
}

// blind adaptive trapezoid of the weighted clamp integral; no knowledge of
// the implementation's segment splitting
double wauc_adaptive_oracle(const RocCurve& curve) {
  auto tpr_at = [&](double f) {
    const auto& P = curve.points;
    if (f <= P.front().fpr) return P.front().tpr;
    for (size_t i = 1; i < P.size(); ++i) {
      if (f <= P[i].fpr) {
        if (P[i].fpr == P[i - 1].fpr) return P[i].tpr;
        double t = (f - P[i - 1].fpr) / (P[i].fpr - P[i - 1].fpr);
        return P[i - 1].tpr + t * (P[i].tpr - P[i - 1].tpr);
      }
    }
    return P.back().tpr;
  };
  auto clamped = [&](double f, double y0, double y1) {
    return std::min(std::max(tpr_at(f), y0), y1) - y0;
  };
  std::function<double(double, double, double, double, double, double, double, int)> adapt =
      [&](double a, double b, double fa, double fb, double y0, double y1, double tol,
          int depth) -> double {
    double m = 0.5 * (a + b);
    double fm = clamped(m, y0, y1);
    double whole = (b - a) * 0.5 * (fa + fb);
    double halves = (m - a) * 0.5 * (fa + fm) + (b - m) * 0.5 * (fm + fb);
    if (depth > 60 || std::abs(whole - halves) < tol) return halves;
    return adapt(a, m, fa, fm, y0, y1, tol * 0.5, depth + 1) +
           adapt(m, b, fm, fb, y0, y1, tol * 0.5, depth + 1);
  };
  auto band = [&](double y0, double y1) {
    // integrate between consecutive curve x-coordinates so jumps stay at
    // interval ends, then refine adaptively inside
    std::vector<double> xs = {0.0, 1.0};
    for (const auto& p : curve.points) xs.push_back(p.fpr);
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    double total = 0;
    for (size_t i = 1; i < xs.size(); ++i) {
      double a = xs[i - 1], b = xs[i];
      if (b <= a) continue;
      total += adapt(a, b, clamped(a, y0, y1), clamped(b, y0, y1), y0, y1, 1e-14, 0);
    }
    return total;
  };
  return (2.0 * band(0.0, 0.4) + 1.0 * band(0.4, 1.0)) / 1.4;
}

ScoreSet random_scores(uint64_t seed, size_t n, bool with_ties = true) {
  Rng rng(seed);
  ScoreSet s;
  for (size_t i = 0; i < n; ++i) {
    double v = rng.uniform();
    if (with_ties && rng.uniform() < 0.3) v = std::round(v * 8.0) / 8.0;  // force tied scores
    s.scores.push_back(v);
    s.labels.push_back(rng.uniform() < 0.5 ? 0 : 1);
  }
  // ensure both classes
  s.labels[0] = 0;
  s.labels[1] = 1;
  return s;
}

}  // namespace

TEST_CASE("pe_min: separable scores reach 0; inverted labels reach 0.5") {
  ScoreSet s;
  s.scores = {0.1, 0.2, 0.8, 0.9};
  s.labels = {0, 0, 1, 1};
  CHECK(pe_min(s) == 0.0);

  ScoreSet inv;
  inv.scores = {0.1, 0.2, 0.8, 0.9};
  inv.labels = {1, 1, 0, 0};
  CHECK(pe_min(inv) == 0.5);
  CHECK(pe_bruteforce(inv) == 0.5);
}

TEST_CASE("pe_min equals exhaustive threshold enumeration exactly") {
  for (uint64_t seed = 0; seed < 50; ++seed) {
    ScoreSet s = random_scores(seed, 60 + seed % 40);
    INFO("seed " << seed);
    CHECK(pe_min(s) == pe_bruteforce(s));
  }
}

TEST_CASE("pe_min is at most 0.5 and needs both classes") {
  for (uint64_t seed = 100; seed < 120; ++seed) CHECK(pe_min(random_scores(seed, 31)) <= 0.5);
  ScoreSet one;
  one.scores = {0.5, 0.6};
  one.labels = {1, 1};
  CHECK_THROWS_AS(pe_min(one), RuntimeFail);
  CHECK_THROWS_AS(roc(one), RuntimeFail);
}

TEST_CASE("roc: monotone with fixed endpoints, ties make diagonals") {
  for (uint64_t seed = 7; seed < 27; ++seed) {
    RocCurve c = roc(random_scores(seed, 50));
    REQUIRE(!c.points.empty());
    CHECK(c.points.front().fpr == 0.0);
    CHECK(c.points.front().tpr == 0.0);
    CHECK(c.points.back().fpr == 1.0);
    CHECK(c.points.back().tpr == 1.0);
    for (size_t i = 1; i < c.points.size(); ++i) {
      CHECK(c.points[i].fpr >= c.points[i - 1].fpr);
      CHECK(c.points[i].tpr >= c.points[i - 1].tpr);
    }
  }
}

TEST_CASE("auc: perfect separation 1.0, label-independent scores 0.5") {
  ScoreSet s;
  s.scores = {0.1, 0.2, 0.8, 0.9};
  s.labels = {0, 0, 1, 1};
  CHECK(auc(roc(s)) == 1.0);

  ScoreSet flat;
  flat.scores = {0.5, 0.5, 0.5, 0.5};
  flat.labels = {0, 1, 0, 1};
  RocCurve c = roc(flat);
  CHECK(c.points.size() == 2);  // single diagonal segment
  CHECK(auc(c) == 0.5);
}

TEST_CASE("auc equals the Mann-Whitney statistic to 1e-12 on 500 samples") {
  ScoreSet s = random_scores(424242, 500);
  CHECK(std::abs(auc(roc(s)) - auc_mann_whitney(s)) <= 1e-12);
}

TEST_CASE("auc complement symmetry under score reversal or label flip") {
  // note: reversing scores AND flipping labels together is the identity
  // transform for AUC; the complement comes from either one alone
  for (uint64_t seed = 300; seed < 310; ++seed) {
    ScoreSet s = random_scores(seed, 80);
    ScoreSet reversed = s;
    for (double& v : reversed.scores) v = 1.0 - v;
    CHECK(std::abs(auc(roc(s)) + auc(roc(reversed)) - 1.0) <= 1e-12);

    ScoreSet relabeled = s;
    for (int& l : relabeled.labels) l = 1 - l;
    CHECK(std::abs(auc(roc(s)) + auc(roc(relabeled)) - 1.0) <= 1e-12);

    ScoreSet both = reversed;
    for (int& l : both.labels) l = 1 - l;
    CHECK(std::abs(auc(roc(s)) - auc(roc(both))) <= 1e-12);
  }
}

TEST_CASE("wauc: perfect detector scores 1.0") {
  ScoreSet s;
  s.scores = {0.1, 0.2, 0.8, 0.9};
  s.labels = {0, 0, 1, 1};
  CHECK(wauc(roc(s)) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("wauc: chance diagonal matches the closed form and the adaptive oracle") {
  ScoreSet flat;
  flat.scores = {0.5, 0.5};
  flat.labels = {0, 1};
  RocCurve c = roc(flat);
  // int min(f,.4) = 0.32, int (max(f,.4)-.4) = 0.18 -> (0.64+0.18)/1.4
  double expect = 0.82 / 1.4;
  CHECK(std::abs(wauc(c) - expect) <= 1e-12);
  CHECK(std::abs(wauc(c) - wauc_adaptive_oracle(c)) <= 1e-9);
}

TEST_CASE("wauc matches the adaptive integration oracle on random curves") {
  for (uint64_t seed = 900; seed < 915; ++seed) {
    RocCurve c = roc(random_scores(seed, 70));
    INFO("seed " << seed);
    CHECK(std::abs(wauc(c) - wauc_adaptive_oracle(c)) <= 1e-9);
  }
}

TEST_CASE("wauc prose orientation swaps the weights") {
  ScoreSet flat;
  flat.scores = {0.5, 0.5};
  flat.labels = {0, 1};
  RocCurve c = roc(flat);
  double expect = (1.0 * 0.32 + 2.0 * 0.18) / 1.6;
  CHECK(std::abs(wauc(c, true) - expect) <= 1e-12);
}

TEST_CASE("metrics are rank statistics: monotone transforms leave them unchanged") {
  ScoreSet s = random_scores(31337, 120);
  ScoreSet t;
  t.labels = s.labels;
  for (double v : s.scores) t.scores.push_back(std::tanh(3.0 * v - 1.0));  // strictly increasing
  CHECK(pe_min(s) == pe_min(t));
  CHECK(auc(roc(s)) == auc(roc(t)));
  CHECK(wauc(roc(s)) == wauc(roc(t)));
}

TEST_CASE("evaluate_scores bundles a machine-readable report") {
  ScoreSet s = random_scores(55, 64);
  MetricsReport r = evaluate_scores(s);
  CHECK(r.pe <= 0.5);
  CHECK(r.auc >= 0.0);
  CHECK(r.auc <= 1.0);
  CHECK(r.n_cover + r.n_stego == 64);
  std::string csv = r.to_csv();
  CHECK(csv.find("metric,value") == 0);
  CHECK(csv.find("pe,") != std::string::npos);
  std::string rc = roc_to_csv(r.roc);
  CHECK(rc.find("fpr,tpr") == 0);
}
