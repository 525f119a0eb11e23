#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "mcnet/image.hpp"

namespace mcnet {

/// Per-pixel additive embedding costs for +1/-1 changes. Wet (forbidden)
/// directions carry infinite cost.
struct CostMap {
  int width = 0, height = 0;
  std::vector<double> rho_plus, rho_minus;

  static constexpr double kWet = std::numeric_limits<double>::infinity();
  size_t size() const { return rho_plus.size(); }
};

/// Per-pixel ternary change probabilities; beta_plus + beta_minus <= 1, zero
/// in wet directions.
struct ChangeProbMap {
  int width = 0, height = 0;
  std::vector<double> beta_plus, beta_minus;

  size_t size() const { return beta_plus.size(); }
  void validate() const;
};

/// Residual map N = stego - cover; entries in {-1, 0, +1}.
struct NoiseMap {
  int width = 0, height = 0;
  std::vector<int8_t> delta;

  std::string to_text() const;                  // signed text matrix
  ImageGray to_visual() const;                  // {-1,0,1} -> {0,128,255}
};

/// Baseline content-adaptive cost model: rho = 1 / (local variance + 1) over
/// a centered window, so smooth regions are expensive and textured regions
/// cheap. Saturated pixels get the out-of-range direction marked wet.
CostMap inverse_variance_cost(const ImageGray& image, int window = 3);

/// Total entropy of the change-probability field, in bits (0 log 0 := 0).
double ternary_entropy(const ChangeProbMap& beta);

struct LambdaResult {
  double lambda = 0;
  ChangeProbMap beta;
  double achieved_bpp = 0;
};

/// Finds lambda > 0 with beta = exp(-lambda*rho) / (1 + exp(-lambda*rho+) +
/// exp(-lambda*rho-)) such that the per-pixel entropy matches payload_bpp to
/// 1e-6. Bracket [1e-6, 1e4]; exceeding the cap or 200 bisection steps is an
/// error. payload 0 short-circuits to beta == 0 at the cap.
LambdaResult solve_lambda(const CostMap& cost, double payload_bpp);

/// Samples +1/-1/0 independently per pixel from beta; deterministic given
/// seed; never writes outside [0,255].
ImageGray simulate_embedding(const ImageGray& cover, const ChangeProbMap& beta, uint64_t seed);

struct EmbedResult {
  ImageGray stego;
  NoiseMap noise;
  double lambda = 0;
  double achieved_bpp = 0;
};

/// cost model -> lambda solve -> simulation, plus the residual for
/// visualization.
EmbedResult embed(const ImageGray& cover, const std::string& cost_model_id, double payload_bpp,
                  uint64_t seed);

// --- cost model registry ----------------------------------------------------
// "wow", "s-uniward", "hill" and "mipod" are registered as pluggable slots;
// their cost functions live in external implementations and can be attached
// with register_cost_model. The shipped model is "inverse_variance".

using CostModelFn = std::function<CostMap(const ImageGray&)>;
void register_cost_model(const std::string& name, CostModelFn fn);
std::vector<std::string> cost_model_names();
bool cost_model_available(const std::string& name);
CostMap compute_cost(const std::string& name, const ImageGray& image);

}  // namespace mcnet
