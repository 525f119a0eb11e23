#pragma once

#include <array>
#include <string>
#include <vector>

#include "mcnet/tensor.hpp"

namespace mcnet {

enum class BankSource { srm, kv, gabor, learned };

/// Ordered set of 5x5 preprocessing/initialization kernels. Smaller source
/// kernels are stored zero-padded to 5x5.
struct KernelBank {
  BankSource source = BankSource::learned;
  std::vector<std::array<double, 25>> kernels;
  std::vector<std::string> names;

  size_t size() const { return kernels.size(); }

  /// Plain-text export (one kernel per block, row-major, decimal). Decimal
  /// fields carry max_digits10 so a round-trip is bit-exact.
  std::string to_text() const;
  static KernelBank from_text(const std::string& text);

  /// Kernels flattened into a conv weight tensor [K, 1, 5, 5].
  template <typename T>
  Tensor<T> to_weight() const;
};

/// The 30 SRM residual kernels, parsed from an embedded checksummed data
/// file. All zero-sum; byte-identical across runs.
KernelBank srm_bank();

/// The single 5x5 KV kernel.
KernelBank kv_kernel();

struct GaborParams {
  std::vector<double> sigmas = {0.5, 1.0};
  double aspect = 0.5;  // spatial aspect ratio
  int orientations = 15;
  bool mean_subtract = true;  // makes kernels zero-sum (high-pass)
};

/// Even-symmetric Gabor kernels on the 5x5 integer grid, wavelength
/// sigma/0.56, orientations k*pi/orientations. 2 scales x 15 orientations
/// by default.
KernelBank gabor_bank(const GaborParams& params = {});

enum class InitKind { xavier, kaiming, gaussian };

/// Deterministic random initializer. Xavier is uniform with variance
/// 2/(fan_in+fan_out); Kaiming is normal with variance 2/fan_in; gaussian is
/// normal(mu, sigma).
template <typename T>
Tensor<T> random_init(const Shape& shape, InitKind kind, uint64_t seed, double mu = 0.0,
                      double sigma = 0.01);

std::string bank_source_name(BankSource s);

}  // namespace mcnet
