#include "mcnet/stego.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <sstream>

namespace mcnet {

void ChangeProbMap::validate() const {
  if (beta_plus.size() != beta_minus.size() ||
      beta_plus.size() != static_cast<size_t>(width) * static_cast<size_t>(height))
    throw RuntimeFail("ChangeProbMap: inconsistent sizes");
  for (size_t i = 0; i < beta_plus.size(); ++i) {
    double bp = beta_plus[i], bm = beta_minus[i];
    if (!(bp >= 0) || !(bm >= 0) || bp + bm > 1.0 + 1e-12)
      throw RuntimeFail("ChangeProbMap: invalid probabilities at pixel " + std::to_string(i));
  }
}

std::string NoiseMap::to_text() const {
  std::ostringstream os;
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c)
      os << (c ? " " : "") << static_cast<int>(delta[static_cast<size_t>(r) * width + c]);
    os << "\n";
  }
  return os.str();
}

ImageGray NoiseMap::to_visual() const {
  ImageGray img(width, height);
  for (size_t i = 0; i < delta.size(); ++i)
    img.pixels[i] = static_cast<uint8_t>(128 + 127 * static_cast<int>(delta[i]));
  return img;
}

// ---------------------------------------------------------------------------

CostMap inverse_variance_cost(const ImageGray& image, int window) {
  if (window < 1 || window % 2 == 0) throw RuntimeFail("inverse_variance_cost: window must be odd");
  int w = image.width, h = image.height, half = window / 2;
  CostMap cost;
  cost.width = w;
  cost.height = h;
  cost.rho_plus.resize(image.size());
  cost.rho_minus.resize(image.size());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double sum = 0, sq = 0;
      int n = 0;
      for (int i = -half; i <= half; ++i) {
        int rr = r + i;
        if (rr < 0 || rr >= h) continue;
        for (int j = -half; j <= half; ++j) {
          int cc = c + j;
          if (cc < 0 || cc >= w) continue;
          double v = static_cast<double>(image.at(rr, cc));
          sum += v;
          sq += v * v;
          ++n;
        }
      }
      double mean = sum / n;
      double var = sq / n - mean * mean;
      if (var < 0) var = 0;
      double rho = 1.0 / (var + 1.0);
      size_t idx = static_cast<size_t>(r) * w + c;
      uint8_t px = image.pixels[idx];
      cost.rho_plus[idx] = px == 255 ? CostMap::kWet : rho;
      cost.rho_minus[idx] = px == 0 ? CostMap::kWet : rho;
    }
  }
  return cost;
}

namespace {

inline double h3(double bp, double bm) {
  double rest = 1.0 - bp - bm;
  double s = 0;
  if (bp > 0) s -= bp * std::log2(bp);
  if (bm > 0) s -= bm * std::log2(bm);
  if (rest > 0) s -= rest * std::log2(rest);
  return s;
}

inline void beta_at(double lambda, double rp, double rm, double& bp, double& bm) {
  double ep = std::exp(-lambda * rp);  // exp(-inf) == 0 handles wet directions
  double em = std::exp(-lambda * rm);
  double z = 1.0 + ep + em;
  bp = ep / z;
  bm = em / z;
}

double entropy_at(double lambda, const CostMap& cost) {
  double total = 0;
  for (size_t i = 0; i < cost.size(); ++i) {
    double bp, bm;
    beta_at(lambda, cost.rho_plus[i], cost.rho_minus[i], bp, bm);
    total += h3(bp, bm);
  }
  return total;
}

ChangeProbMap beta_map_at(double lambda, const CostMap& cost) {
  ChangeProbMap beta;
  beta.width = cost.width;
  beta.height = cost.height;
  beta.beta_plus.resize(cost.size());
  beta.beta_minus.resize(cost.size());
  for (size_t i = 0; i < cost.size(); ++i)
    beta_at(lambda, cost.rho_plus[i], cost.rho_minus[i], beta.beta_plus[i], beta.beta_minus[i]);
  return beta;
}

}  // namespace

double ternary_entropy(const ChangeProbMap& beta) {
  double total = 0;
  for (size_t i = 0; i < beta.size(); ++i) total += h3(beta.beta_plus[i], beta.beta_minus[i]);
  return total;
}

LambdaResult solve_lambda(const CostMap& cost, double payload_bpp) {
  constexpr double kLambdaMin = 1e-6, kLambdaMax = 1e4, kTolBpp = 1e-6;
  constexpr int kMaxIter = 200;
  double n = static_cast<double>(cost.size());
  if (payload_bpp < 0) throw RuntimeFail("solve_lambda: negative payload");

  LambdaResult res;
  if (payload_bpp == 0.0) {
    // degenerate payload: cap lambda, no changes at all
    res.lambda = kLambdaMax;
    res.beta.width = cost.width;
    res.beta.height = cost.height;
    res.beta.beta_plus.assign(cost.size(), 0.0);
    res.beta.beta_minus.assign(cost.size(), 0.0);
    res.achieved_bpp = 0.0;
    return res;
  }

  double target = payload_bpp * n;
  double h_lo = entropy_at(kLambdaMin, cost);
  if (target > h_lo + kTolBpp * n)
    throw RuntimeFail("solve_lambda: payload " + std::to_string(payload_bpp) +
                      " bpp infeasible (max " + std::to_string(h_lo / n) + " bpp)");
  double h_hi = entropy_at(kLambdaMax, cost);
  if (target < h_hi - kTolBpp * n)
    throw RuntimeFail("solve_lambda: payload " + std::to_string(payload_bpp) +
                      " bpp below the lambda cap floor of " + std::to_string(h_hi / n) + " bpp");

  // Bisect to full bracket convergence (not just the entropy tolerance) so
  // lambda itself is reproducible to ~1e-13 relative.
  double lo = kLambdaMin, hi = kLambdaMax;
  double mid = 0.5 * (lo + hi);
  int it = 0;
  for (; it < kMaxIter; ++it) {
    mid = 0.5 * (lo + hi);
    if (hi - lo <= 1e-13 * mid) break;
    if (entropy_at(mid, cost) > target)
      lo = mid;  // entropy decreases with lambda
    else
      hi = mid;
  }
  if (it >= kMaxIter) throw RuntimeFail("solve_lambda: no convergence after 200 bisection steps");
  double h = entropy_at(mid, cost);
  if (std::abs(h / n - payload_bpp) > kTolBpp)
    throw RuntimeFail("solve_lambda: converged lambda misses payload by " +
                      std::to_string(std::abs(h / n - payload_bpp)) + " bpp");
  res.lambda = mid;
  res.beta = beta_map_at(mid, cost);
  res.achieved_bpp = h / n;
  return res;
}

ImageGray simulate_embedding(const ImageGray& cover, const ChangeProbMap& beta, uint64_t seed) {
  if (beta.width != cover.width || beta.height != cover.height)
    throw RuntimeFail("simulate_embedding: probability map size mismatch");
  beta.validate();
  ImageGray stego = cover;
  Rng rng(seed);
  for (size_t i = 0; i < cover.size(); ++i) {
    double u = rng.uniform();
    int change = 0;
    if (u < beta.beta_plus[i])
      change = 1;
    else if (u < beta.beta_plus[i] + beta.beta_minus[i])
      change = -1;
    if (change) {
      int v = static_cast<int>(cover.pixels[i]) + change;
      if (v < 0 || v > 255)
        throw RuntimeFail("simulate_embedding: change probability nonzero in a wet direction");
      stego.pixels[i] = static_cast<uint8_t>(v);
    }
  }
  return stego;
}

EmbedResult embed(const ImageGray& cover, const std::string& cost_model_id, double payload_bpp,
                  uint64_t seed) {
  CostMap cost = compute_cost(cost_model_id, cover);
  LambdaResult lr = solve_lambda(cost, payload_bpp);
  EmbedResult out;
  out.stego = simulate_embedding(cover, lr.beta, seed);
  out.noise.width = cover.width;
  out.noise.height = cover.height;
  out.noise.delta.resize(cover.size());
  for (size_t i = 0; i < cover.size(); ++i)
    out.noise.delta[i] =
        static_cast<int8_t>(static_cast<int>(out.stego.pixels[i]) - static_cast<int>(cover.pixels[i]));
  out.lambda = lr.lambda;
  out.achieved_bpp = lr.achieved_bpp;
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::map<std::string, CostModelFn>& registry() {
  static std::map<std::string, CostModelFn> models = [] {
    std::map<std::string, CostModelFn> m;
    m["inverse_variance"] = [](const ImageGray& img) { return inverse_variance_cost(img); };
    // named slots for the standard content-adaptive schemes; cost formulas
    // come from their own implementations
    m["wow"] = nullptr;
    m["s-uniward"] = nullptr;
    m["hill"] = nullptr;
    m["mipod"] = nullptr;
    return m;
  }();
  return models;
}

std::mutex registry_mutex;

}  // namespace

void register_cost_model(const std::string& name, CostModelFn fn) {
  std::lock_guard<std::mutex> lk(registry_mutex);
  registry()[name] = std::move(fn);
}

std::vector<std::string> cost_model_names() {
  std::lock_guard<std::mutex> lk(registry_mutex);
  std::vector<std::string> names;
  for (const auto& [name, fn] : registry()) names.push_back(name + (fn ? "" : " (slot)"));
  return names;
}

bool cost_model_available(const std::string& name) {
  std::lock_guard<std::mutex> lk(registry_mutex);
  auto it = registry().find(name);
  return it != registry().end() && it->second != nullptr;
}

CostMap compute_cost(const std::string& name, const ImageGray& image) {
  CostModelFn fn;
  {
    std::lock_guard<std::mutex> lk(registry_mutex);
    auto it = registry().find(name);
    if (it == registry().end()) {
      std::string msg = "unknown cost model '" + name + "'; registered:";
      for (const auto& [n, f] : registry()) msg += " " + n + (f ? "" : "(slot)");
      throw UsageError(msg);
    }
    fn = it->second;
  }
  if (!fn)
    throw UsageError("cost model '" + name +
                     "' is a pluggable slot with no implementation attached; use "
                     "register_cost_model or pick an implemented model (inverse_variance)");
  return fn(image);
}

}  // namespace mcnet
