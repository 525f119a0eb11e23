#include "mcnet/filters.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>

namespace mcnet {

#include "srm_data.inc"

std::string bank_source_name(BankSource s) {
  switch (s) {
    case BankSource::srm: return "srm";
    case BankSource::kv: return "kv";
    case BankSource::gabor: return "gabor";
    default: return "learned";
  }
}

static BankSource bank_source_from(const std::string& s) {
  if (s == "srm") return BankSource::srm;
  if (s == "kv") return BankSource::kv;
  if (s == "gabor") return BankSource::gabor;
  if (s == "learned") return BankSource::learned;
  throw RuntimeFail("unknown kernel bank source '" + s + "'");
}

std::string KernelBank::to_text() const {
  std::ostringstream os;
  os << "source " << bank_source_name(source) << "\n";
  os << "count " << kernels.size() << "\n";
  char buf[48];
  for (size_t k = 0; k < kernels.size(); ++k) {
    os << "kernel " << names[k] << "\n";
    for (int r = 0; r < 5; ++r) {
      for (int c = 0; c < 5; ++c) {
        std::snprintf(buf, sizeof(buf), "%.17g", kernels[k][static_cast<size_t>(r * 5 + c)]);
        os << (c ? " " : "") << buf;
      }
      os << "\n";
    }
  }
  return os.str();
}

KernelBank KernelBank::from_text(const std::string& text) {
  std::istringstream is(text);
  std::string tok;
  KernelBank bank;
  size_t count = 0;
  if (!(is >> tok) || tok != "source") throw RuntimeFail("kernel bank: missing 'source'");
  is >> tok;
  bank.source = bank_source_from(tok);
  if (!(is >> tok) || tok != "count") throw RuntimeFail("kernel bank: missing 'count'");
  is >> count;
  for (size_t k = 0; k < count; ++k) {
    if (!(is >> tok) || tok != "kernel") throw RuntimeFail("kernel bank: missing kernel block");
    std::string name;
    is >> name;
    std::array<double, 25> grid{};
    for (int i = 0; i < 25; ++i)
      if (!(is >> grid[static_cast<size_t>(i)])) throw RuntimeFail("kernel bank: truncated kernel '" + name + "'");
    bank.names.push_back(name);
    bank.kernels.push_back(grid);
  }
  return bank;
}

template <typename T>
Tensor<T> KernelBank::to_weight() const {
  int64_t K = static_cast<int64_t>(kernels.size());
  std::vector<T> w(static_cast<size_t>(K * 25));
  for (int64_t k = 0; k < K; ++k)
    for (int i = 0; i < 25; ++i)
      w[static_cast<size_t>(k * 25 + i)] = static_cast<T>(kernels[static_cast<size_t>(k)][static_cast<size_t>(i)]);
  return Tensor<T>::from({K, 1, 5, 5}, std::move(w));
}

template Tensor<float> KernelBank::to_weight() const;
template Tensor<double> KernelBank::to_weight() const;

// ---------------------------------------------------------------------------

static KernelBank parse_srm_data() {
  size_t len = std::strlen(kSrmData);
  if (crc32_bytes(kSrmData, len) != kSrmDataCrc)
    throw RuntimeFail("srm_bank: embedded kernel data failed its checksum");
  std::istringstream is(kSrmData);
  std::string tag;
  size_t count = 0;
  is >> tag >> count;
  if (tag != "srm" || count != 30) throw RuntimeFail("srm_bank: malformed embedded data");
  KernelBank bank;
  bank.source = BankSource::srm;
  for (size_t k = 0; k < count; ++k) {
    std::string kw, name, divkw;
    long div = 1;
    is >> kw >> name >> divkw >> div;
    if (kw != "kernel" || divkw != "div" || div == 0)
      throw RuntimeFail("srm_bank: malformed kernel header");
    std::array<double, 25> grid{};
    for (int i = 0; i < 25; ++i) {
      long v;
      if (!(is >> v)) throw RuntimeFail("srm_bank: truncated kernel data");
      grid[static_cast<size_t>(i)] = static_cast<double>(v) / static_cast<double>(div);
    }
    bank.names.push_back(name);
    bank.kernels.push_back(grid);
  }
  return bank;
}

KernelBank srm_bank() {
  // Parsed once; the bank is immutable afterwards.
  static const KernelBank bank = parse_srm_data();
  return bank;
}

KernelBank kv_kernel() {
  KernelBank srm = srm_bank();
  KernelBank bank;
  bank.source = BankSource::kv;
  for (size_t k = 0; k < srm.size(); ++k) {
    if (srm.names[k] == "sq5") {
      bank.names.push_back("kv");
      bank.kernels.push_back(srm.kernels[k]);
    }
  }
  if (bank.size() != 1) throw RuntimeFail("kv_kernel: embedded data missing sq5 entry");
  return bank;
}

KernelBank gabor_bank(const GaborParams& params) {
  KernelBank bank;
  bank.source = BankSource::gabor;
  for (double sigma : params.sigmas) {
    double lambda = sigma / 0.56;
    for (int o = 0; o < params.orientations; ++o) {
      double theta = M_PI * static_cast<double>(o) / static_cast<double>(params.orientations);
      double ct = std::cos(theta), st = std::sin(theta);
      std::array<double, 25> g{};
      for (int r = 0; r < 5; ++r) {
        for (int c = 0; c < 5; ++c) {
          double x = static_cast<double>(c - 2);
          double y = static_cast<double>(r - 2);
          double xp = x * ct + y * st;
          double yp = -x * st + y * ct;
          double envelope =
              std::exp(-(xp * xp + params.aspect * params.aspect * yp * yp) / (2.0 * sigma * sigma));
          g[static_cast<size_t>(r * 5 + c)] = envelope * std::cos(2.0 * M_PI * xp / lambda);
        }
      }
      if (params.mean_subtract) {
        double mean = 0;
        for (double v : g) mean += v;
        mean /= 25.0;
        for (double& v : g) v -= mean;
      }
      std::ostringstream name;
      name << "gabor_s" << sigma << "_o" << o;
      bank.names.push_back(name.str());
      bank.kernels.push_back(g);
    }
  }
  return bank;
}

// ---------------------------------------------------------------------------

namespace {

void fan_in_out(const Shape& shape, int64_t& fan_in, int64_t& fan_out) {
  if (shape.size() >= 2) {
    int64_t receptive = 1;
    for (size_t i = 2; i < shape.size(); ++i) receptive *= shape[i];
    fan_in = shape[1] * receptive;
    fan_out = shape[0] * receptive;
  } else {
    fan_in = fan_out = shape_numel(shape);
  }
}

}  // namespace

template <typename T>
Tensor<T> random_init(const Shape& shape, InitKind kind, uint64_t seed, double mu, double sigma) {
  Rng rng(seed);
  int64_t n = shape_numel(shape);
  std::vector<T> v(static_cast<size_t>(n));
  int64_t fan_in, fan_out;
  fan_in_out(shape, fan_in, fan_out);
  switch (kind) {
    case InitKind::xavier: {
      double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      for (auto& x : v) x = static_cast<T>((rng.uniform() * 2.0 - 1.0) * a);
      break;
    }
    case InitKind::kaiming: {
      double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (auto& x : v) x = static_cast<T>(rng.normal() * sd);
      break;
    }
    case InitKind::gaussian:
      for (auto& x : v) x = static_cast<T>(mu + rng.normal() * sigma);
      break;
  }
  return Tensor<T>::from(shape, std::move(v));
}

template Tensor<float> random_init(const Shape&, InitKind, uint64_t, double, double);
template Tensor<double> random_init(const Shape&, InitKind, uint64_t, double, double);

}  // namespace mcnet
