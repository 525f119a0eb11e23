#include "mcnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mcnet {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << "grad_check: " << checked << " elements, max rel err " << max_rel_err << ", "
     << failures.size() << " over tolerance";
  for (size_t i = 0; i < failures.size() && i < 8; ++i) {
    const auto& f = failures[i];
    os << "\n  " << f.tensor << "[" << f.index << "] analytic=" << f.analytic
       << " numeric=" << f.numeric << " rel=" << f.rel_err;
  }
  return os.str();
}

GradCheckReport grad_check(const std::function<Tensor<double>()>& loss_fn,
                           const std::vector<NamedLeaf>& leaves, double tolerance, double h,
                           int64_t max_probes_per_tensor, uint64_t probe_seed) {
  GradCheckReport report;

  // Analytic pass.
  for (const auto& leaf : leaves) const_cast<Tensor<double>&>(leaf.tensor).zero_grad();
  Tensor<double> loss = loss_fn();
  loss.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (const auto& leaf : leaves) {
    if (leaf.tensor.has_grad())
      analytic.emplace_back(leaf.tensor.grad_vec().begin(), leaf.tensor.grad_vec().end());
    else
      analytic.emplace_back(static_cast<size_t>(leaf.tensor.numel()), 0.0);
  }

  Rng rng(probe_seed);
  for (size_t li = 0; li < leaves.size(); ++li) {
    Tensor<double> t = leaves[li].tensor;
    int64_t n = t.numel();
    std::vector<int64_t> idx;
    if (max_probes_per_tensor > 0 && n > max_probes_per_tensor) {
      // sample without replacement
      std::vector<int64_t> all(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
      for (int64_t i = 0; i < max_probes_per_tensor; ++i) {
        int64_t j = i + static_cast<int64_t>(rng.below(static_cast<uint64_t>(n - i)));
        std::swap(all[static_cast<size_t>(i)], all[static_cast<size_t>(j)]);
        idx.push_back(all[static_cast<size_t>(i)]);
      }
    } else {
      idx.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    }

    double* data = t.data();
    for (int64_t i : idx) {
      double saved = data[i];
      data[i] = saved + h;
      double f_plus = loss_fn().item();
      data[i] = saved - h;
      double f_minus = loss_fn().item();
      data[i] = saved;

      double numeric = (f_plus - f_minus) / (2.0 * h);
      double a = analytic[li][static_cast<size_t>(i)];
      double denom = std::max(std::abs(a) + std::abs(numeric), 1.0);
      double rel = std::abs(a - numeric) / denom;
      report.checked += 1;
      report.max_rel_err = std::max(report.max_rel_err, rel);
      if (rel > tolerance) report.failures.push_back({leaves[li].name, i, a, numeric, rel});
    }
  }
  return report;
}

}  // namespace mcnet
