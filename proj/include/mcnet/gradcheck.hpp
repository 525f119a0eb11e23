#pragma once

#include <functional>
#include <string>

#include "mcnet/tensor.hpp"

namespace mcnet {

/// Central finite-difference gradient verification (f64 only; f32 rounding
/// noise would drown the comparison). `loss_fn` must rebuild the scalar loss
/// from the given leaves on every call.
struct GradCheckEntry {
  std::string tensor;
  int64_t index;
  double analytic;
  double numeric;
  double rel_err;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  int64_t checked = 0;
  std::vector<GradCheckEntry> failures;  // entries exceeding tolerance
  bool ok() const { return failures.empty(); }
  std::string summary() const;
};

struct NamedLeaf {
  std::string name;
  Tensor<double> tensor;
};

/// Probes every element when max_probes_per_tensor == 0, otherwise a
/// deterministic random subsample per tensor (seeded), which keeps the full-
/// network check inside its time budget. rel err uses |a-n| / max(|a|+|n|, 1)
/// so near-zero gradients are compared absolutely.
GradCheckReport grad_check(const std::function<Tensor<double>()>& loss_fn,
                           const std::vector<NamedLeaf>& leaves, double tolerance,
                           double h = 1e-5, int64_t max_probes_per_tensor = 0,
                           uint64_t probe_seed = 17);

}  // namespace mcnet
