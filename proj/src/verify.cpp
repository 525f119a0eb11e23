#include "mcnet/verify.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "mcnet/gradcheck.hpp"
#include "mcnet/metrics.hpp"
#include "mcnet/model.hpp"
#include "mcnet/pipeline.hpp"
#include "mcnet/stego.hpp"

namespace mcnet {

namespace {

struct Ctx {
  std::vector<VerifyCheck>* out;
  bool quick;
};

void run_check(Ctx& ctx, const std::string& name, const std::function<std::string()>& body) {
  VerifyCheck check;
  check.name = name;
  auto t0 = std::chrono::steady_clock::now();
  try {
    std::string detail = body();  // empty string means pass
    check.pass = detail.empty();
    check.detail = detail;
  } catch (const std::exception& e) {
    check.pass = false;
    check.detail = e.what();
  }
  check.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ctx.out->push_back(std::move(check));
}

template <typename T>
Tensor<T> randt(const Shape& shape, uint64_t seed, bool rg = false, double scale = 1.0) {
  Rng rng(seed);
  std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.normal() * scale);
  return Tensor<T>::from(shape, std::move(v), rg);
}

std::string expect(bool cond, const std::string& msg) { return cond ? "" : msg; }

std::string report_or_empty(const GradCheckReport& r) {
  return r.ok() ? "" : r.summary();
}

// --- oracles kept independent of the implementations they check --------------

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
      bool called = s.scores[i] > tau;
      if (!s.labels[i] && called) ++fa;
      if (s.labels[i] && !called) ++md;
    }
    best = std::min(best, 0.5 * (static_cast<double>(fa) / static_cast<double>(nc) +
                                 static_cast<double>(md) / static_cast<double>(ns)));
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
      if (s.scores[i] > s.scores[j]) u += 1.0;
      else if (s.scores[i] == s.scores[j]) u += 0.5;
    }
  }
  for (int l : s.labels) (l ? ns : nc) += 1;
  return u / (static_cast<double>(ns) * static_cast<double>(nc));
}

double wauc_oracle(const RocCurve& curve) {
  auto tpr_at = [&](double f) {
    const auto& P = curve.points;
    if (f <= P.front().fpr) return P.front().tpr;
    for (size_t i = 1; i < P.size(); ++i)
      if (f <= P[i].fpr) {
        if (P[i].fpr == P[i - 1].fpr) return P[i].tpr;
        double t = (f - P[i - 1].fpr) / (P[i].fpr - P[i - 1].fpr);
        return P[i - 1].tpr + t * (P[i].tpr - P[i - 1].tpr);
      }
    return P.back().tpr;
  };
  std::function<double(double, double, double, double, double, double, double, int)> adapt =
      [&](double a, double b, double fa, double fb, double y0, double y1, double tol,
          int depth) -> double {
    double m = 0.5 * (a + b);
    double fm = std::min(std::max(tpr_at(m), y0), y1) - y0;
    double whole = (b - a) * 0.5 * (fa + fb);
    double halves = (m - a) * 0.5 * (fa + fm) + (b - m) * 0.5 * (fm + fb);
    if (depth > 60 || std::abs(whole - halves) < tol) return halves;
    return adapt(a, m, fa, fm, y0, y1, tol * 0.5, depth + 1) +
           adapt(m, b, fm, fb, y0, y1, tol * 0.5, depth + 1);
  };
  auto band = [&](double y0, double y1) {
    std::vector<double> xs = {0.0, 1.0};
    for (const auto& p : curve.points) xs.push_back(p.fpr);
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    double total = 0;
    for (size_t i = 1; i < xs.size(); ++i) {
      if (xs[i] <= xs[i - 1]) continue;
      double fa = std::min(std::max(tpr_at(xs[i - 1]), y0), y1) - y0;
      double fb = std::min(std::max(tpr_at(xs[i]), y0), y1) - y0;
      total += adapt(xs[i - 1], xs[i], fa, fb, y0, y1, 1e-14, 0);
    }
    return total;
  };
  return (2.0 * band(0.0, 0.4) + band(0.4, 1.0)) / 1.4;
}

double closed_form_lambda(double cost, double payload) {
  auto h = [](double b) {
    double rest = 1.0 - 2.0 * b;
    double s = 0;
    if (b > 0) s -= 2.0 * b * std::log2(b);
    if (rest > 0) s -= rest * std::log2(rest);
    return s;
  };
  double lo = 1e-300, hi = 1.0 / 3.0;
  for (int i = 0; i < 500; ++i) {
    double mid = 0.5 * (lo + hi);
    (h(mid) < payload ? lo : hi) = mid;
  }
  double beta = 0.5 * (lo + hi);
  return -std::log(beta / (1.0 - 2.0 * beta)) / cost;
}

ScoreSet random_scores(uint64_t seed, size_t n) {
  Rng rng(seed);
  ScoreSet s;
  for (size_t i = 0; i < n; ++i) {
    double v = rng.uniform();
    if (rng.uniform() < 0.3) v = std::round(v * 8.0) / 8.0;
    s.scores.push_back(v);
    s.labels.push_back(rng.uniform() < 0.5 ? 0 : 1);
  }
  s.labels[0] = 0;
  s.labels[1] = 1;
  return s;
}

// ------------------------------------------------------------------------------

void gradient_checks(Ctx& ctx) {
  run_check(ctx, "conv2d identity 1x1", [] {
    auto x = randt<float>({1, 1, 6, 6}, 1);
    auto w = Tensor<float>::full({1, 1, 1, 1}, 1.0f);
    auto y = conv2d(x, w, Tensor<float>(), 1, 0);
    for (int64_t i = 0; i < x.numel(); ++i)
      if (y.data()[i] != x.data()[i]) return std::string("identity broken at ") + std::to_string(i);
    return std::string();
  });

  run_check(ctx, "conv2d direct/im2col agreement", [] {
    for (uint64_t seed = 0; seed < 4; ++seed) {
      auto x = randt<float>({2, 3, 10, 9}, 100 + seed);
      auto w = randt<float>({4, 3, 5, 3}, 200 + seed, false, 0.5);
      auto b = randt<float>({4}, 300 + seed, false, 0.1);
      auto y1 = conv2d(x, w, b, 1, 2, ConvAlgo::im2col);
      auto y2 = conv2d(x, w, b, 1, 2, ConvAlgo::direct);
      for (int64_t i = 0; i < y1.numel(); ++i)
        if (std::abs(y1.data()[i] - y2.data()[i]) > 1e-5f * (1.0f + std::abs(y1.data()[i])))
          return "paths disagree (seed " + std::to_string(seed) + ")";
    }
    return std::string();
  });

  run_check(ctx, "conv2d gradient vs finite differences", [] {
    auto x = randt<double>({2, 3, 8, 8}, 11, true);
    auto w = randt<double>({4, 3, 3, 3}, 12, true, 0.5);
    auto b = randt<double>({4}, 13, true, 0.1);
    auto t = randt<double>({2, 4, 8, 8}, 14);
    return report_or_empty(
        grad_check([&] { return mse_loss(conv2d(x, w, b, 1, 1), t); },
                   {{"x", x}, {"w", w}, {"b", b}}, 1e-6));
  });

  run_check(ctx, "batch_norm normalization + gradient", [] {
    auto xf = randt<float>({4, 3, 5, 5}, 21, false, 3.0);
    BnStats<float> st;
    auto y = batch_norm(xf, Tensor<float>::full({3}, 1.0f), Tensor<float>::zeros({3}), st, true);
    for (int64_t c = 0; c < 3; ++c) {
      double mean = 0;
      for (int64_t n = 0; n < 4; ++n)
        for (int64_t i = 0; i < 25; ++i) mean += y.data()[(n * 3 + c) * 25 + i];
      mean /= 100.0;
      if (std::abs(mean) > 1e-6) return std::string("train-mode mean off: ") + std::to_string(mean);
    }
    auto x = randt<double>({2, 3, 4, 4}, 22, true, 2.0);
    auto gamma = randt<double>({3}, 23, true, 0.3);
    for (int i = 0; i < 3; ++i) gamma.data()[i] += 1.0;
    auto beta = randt<double>({3}, 24, true, 0.3);
    auto t = randt<double>({2, 3, 4, 4}, 25);
    return report_or_empty(grad_check(
        [&] {
          BnStats<double> fresh;
          return mse_loss(batch_norm(x, gamma, beta, fresh, true), t);
        },
        {{"x", x}, {"gamma", gamma}, {"beta", beta}}, 1e-6));
  });

  run_check(ctx, "activations + prelu dalpha gradients", [] {
    auto x = randt<double>({2, 3, 4, 4}, 31, true);
    auto alpha = Tensor<double>::from({3}, {0.25, 0.1, 0.4}, true);
    auto t = randt<double>({2, 3, 4, 4}, 32);
    auto r1 = grad_check([&] { return mse_loss(prelu(x, alpha), t); },
                         {{"x", x}, {"alpha", alpha}}, 1e-6);
    if (!r1.ok()) return r1.summary();
    auto r2 = grad_check([&] { return mse_loss(sigmoid(tanh_act(leaky_relu(x))), t); }, {{"x", x}},
                         1e-6);
    return report_or_empty(r2);
  });

  run_check(ctx, "abs subgradient (probed away from zero)", [] {
    auto x = randt<double>({2, 2, 3, 3}, 41, true);
    for (int64_t i = 0; i < x.numel(); ++i)
      if (std::abs(x.data()[i]) < 1e-3) x.data()[i] = 0.7;
    auto t = randt<double>({2, 2, 3, 3}, 42);
    return report_or_empty(grad_check([&] { return mse_loss(abs_op(x), t); }, {{"x", x}}, 1e-6));
  });

  run_check(ctx, "pooling gradients", [] {
    auto x = randt<double>({2, 2, 6, 6}, 51, true);
    auto t1 = randt<double>({2, 2, 3, 3}, 52);
    auto r1 = grad_check([&] { return mse_loss(avg_pool(x, 3, 2, 1), t1); }, {{"x", x}}, 1e-6);
    if (!r1.ok()) return r1.summary();
    auto t2 = randt<double>({2, 2}, 53);
    return report_or_empty(
        grad_check([&] { return mse_loss(global_avg_pool(x), t2); }, {{"x", x}}, 1e-6));
  });

  run_check(ctx, "fc + softmax + bce joint gradient", [] {
    auto x = randt<double>({3, 6}, 61, true);
    auto w = randt<double>({2, 6}, 62, true, 0.5);
    auto b = randt<double>({2}, 63, true, 0.1);
    std::vector<int> labels = {0, 1, 0};
    return report_or_empty(grad_check(
        [&] { return bce_loss(take_column(softmax_rows(fully_connected(x, w, b)), 1), labels); },
        {{"x", x}, {"w", w}, {"b", b}}, 1e-6));
  });

  run_check(ctx, "attention composite gradient", [] {
    auto q = randt<double>({2, 4, 6}, 71, true, 0.5);
    auto k = randt<double>({2, 4, 6}, 72, true, 0.5);
    auto v = randt<double>({2, 8, 6}, 73, true, 0.5);
    auto g = Tensor<double>::scalar(0.7, true);
    auto x0 = randt<double>({2, 8, 6}, 74, true, 0.5);
    auto t = randt<double>({2, 8, 6}, 75);
    return report_or_empty(grad_check(
        [&] {
          auto attn = softmax_rows(bmm(q, k, true, false));
          return mse_loss(add(scale_by(bmm(v, attn, false, true), g), x0), t);
        },
        {{"q", q}, {"k", k}, {"v", v}, {"g", g}, {"x0", x0}}, 1e-6));
  });

  run_check(ctx, "softmax rows sum to one under extremes", [] {
    auto s = softmax_rows(Tensor<float>::from({1, 2}, {1000.0f, 0.0f}));
    if (!std::isfinite(s.data()[0])) return std::string("overflow in softmax");
    auto r = softmax_rows(randt<float>({9, 7}, 81, false, 5.0));
    for (int64_t i = 0; i < 9; ++i) {
      double sum = 0;
      for (int64_t j = 0; j < 7; ++j) sum += r.data()[i * 7 + j];
      if (std::abs(sum - 1.0) > 1e-6) return std::string("row sum off");
    }
    return std::string();
  });

  run_check(ctx, "adamax zero-grad fixpoint and hand value", [] {
    Parameter<double> p;
    p.tensor = Tensor<double>::from({2}, {1.25, -0.5}, true);
    auto before = p.tensor.values();
    Adamax<double> opt;
    p.tensor.zero_grad();
    opt.step({&p}, 1e-3);
    if (p.tensor.values() != before) return std::string("zero-grad step moved parameters");
    Parameter<double> q;
    q.tensor = Tensor<double>::scalar(0.0, true);
    q.tensor.grad()[0] = 1.0;
    opt.step({&q}, 1e-3);
    double expect = -1e-3 / (1.0 + 1e-8);
    if (std::abs(q.tensor.item() - expect) > 1e-15) return std::string("hand-computed update off");
    return std::string();
  });
}

void filter_checks(Ctx& ctx) {
  run_check(ctx, "srm bank: checksum, 30 kernels, zero sums", [] {
    KernelBank bank = srm_bank();
    if (bank.size() != 30) return std::string("bank size != 30");
    for (const auto& k : bank.kernels) {
      double s = 0;
      for (double v : k) s += v;
      if (std::abs(s) > 1e-9) return std::string("kernel not zero-sum");
    }
    return std::string();
  });

  run_check(ctx, "kv kernel: single, zero-sum", [] {
    KernelBank kv = kv_kernel();
    double s = 0;
    for (double v : kv.kernels[0]) s += v;
    return expect(kv.size() == 1 && std::abs(s) <= 1e-9, "kv kernel malformed");
  });

  run_check(ctx, "gabor bank: count, center value, determinism", [] {
    KernelBank a = gabor_bank();
    KernelBank b = gabor_bank();
    if (a.size() != 30) return std::string("gabor bank size != 30");
    for (size_t k = 0; k < 30; ++k)
      for (int i = 0; i < 25; ++i)
        if (a.kernels[k][static_cast<size_t>(i)] != b.kernels[k][static_cast<size_t>(i)])
          return std::string("gabor bank not reproducible");
    GaborParams raw;
    raw.mean_subtract = false;
    KernelBank pre = gabor_bank(raw);
    for (size_t k = 0; k < 30; ++k)
      if (std::abs(pre.kernels[k][12] - 1.0) > 1e-12)
        return std::string("pre-subtraction center value != 1");
    return std::string();
  });

  run_check(ctx, "kernel bank text round-trip", [] {
    for (const KernelBank& bank : {srm_bank(), kv_kernel(), gabor_bank()}) {
      KernelBank back = KernelBank::from_text(bank.to_text());
      for (size_t k = 0; k < bank.size(); ++k)
        for (int i = 0; i < 25; ++i)
          if (back.kernels[k][static_cast<size_t>(i)] != bank.kernels[k][static_cast<size_t>(i)])
            return std::string("round-trip not bit-exact");
    }
    return std::string();
  });
}

void solver_checks(Ctx& ctx) {
  run_check(ctx, "lambda solver vs constant-cost closed form", [] {
    for (double c : {0.25, 1.0, 3.0}) {
      for (double payload : {0.1, 0.4}) {
        CostMap cost;
        cost.width = cost.height = 16;
        cost.rho_plus.assign(256, c);
        cost.rho_minus.assign(256, c);
        LambdaResult lr = solve_lambda(cost, payload);
        double want = closed_form_lambda(c, payload);
        if (std::abs(lr.lambda - want) / want > 1e-9)
          return "lambda off at c=" + std::to_string(c) + " p=" + std::to_string(payload);
      }
    }
    return std::string();
  });

  run_check(ctx, "lambda solver payload accuracy on random maps", [&] {
    int maps = ctx.quick ? 6 : 20;
    Rng rng(4242);
    for (int t = 0; t < maps; ++t) {
      CostMap cost;
      cost.width = cost.height = 24;
      for (int i = 0; i < 576; ++i) {
        double rho = 0.05 + rng.uniform() * 2.0;
        cost.rho_plus.push_back(rho);
        cost.rho_minus.push_back(rho);
      }
      double payload = 0.1 + 0.1 * (t % 5);
      LambdaResult lr = solve_lambda(cost, payload);
      if (std::abs(ternary_entropy(lr.beta) / 576.0 - payload) > 1e-6)
        return "payload missed on map " + std::to_string(t);
    }
    return std::string();
  });

  run_check(ctx, "embedding: determinism, zero payload, wet safety", [] {
    // moderately textured cover (uniform noise would push the entropy floor
    // at the lambda cap above realistic payloads)
    ImageGray cover(32, 32);
    Rng rng(7);
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c) {
        double v = 90.0 + 3.0 * c + (rng.uniform() - 0.5) * 30.0;
        cover.at(r, c) = static_cast<uint8_t>(std::min(254.0, std::max(1.0, v)));
      }
    cover.pixels[0] = 0;
    cover.pixels[1] = 255;
    EmbedResult z = embed(cover, "inverse_variance", 0.0, 5);
    if (z.stego.pixels != cover.pixels) return std::string("zero payload changed pixels");
    EmbedResult a = embed(cover, "inverse_variance", 0.4, 5);
    EmbedResult b = embed(cover, "inverse_variance", 0.4, 5);
    if (a.stego.pixels != b.stego.pixels) return std::string("same seed, different stego");
    for (size_t i = 0; i < cover.size(); ++i) {
      int d = std::abs(static_cast<int>(a.stego.pixels[i]) - static_cast<int>(cover.pixels[i]));
      if (d > 1) return std::string("change magnitude > 1");
    }
    return std::string();
  });

  run_check(ctx, "ternary entropy vs compensated summation", [] {
    Rng rng(77);
    ChangeProbMap beta;
    beta.width = beta.height = 48;
    for (int i = 0; i < 48 * 48; ++i) {
      beta.beta_plus.push_back(rng.uniform() * 0.4);
      beta.beta_minus.push_back(rng.uniform() * 0.4);
    }
    long double oracle = 0;
    for (size_t i = 0; i < beta.size(); ++i) {
      long double bp = beta.beta_plus[i], bm = beta.beta_minus[i], rest = 1.0L - bp - bm;
      if (bp > 0) oracle -= bp * std::log2(bp);
      if (bm > 0) oracle -= bm * std::log2(bm);
      if (rest > 0) oracle -= rest * std::log2(rest);
    }
    double got = ternary_entropy(beta);
    return expect(std::abs(got - static_cast<double>(oracle)) / static_cast<double>(oracle) <= 1e-12,
                  "entropy mismatch vs oracle");
  });
}

void metric_checks(Ctx& ctx) {
  run_check(ctx, "pe_min equals exhaustive enumeration", [&] {
    int sets = ctx.quick ? 40 : 150;
    for (uint64_t seed = 0; seed < static_cast<uint64_t>(sets); ++seed) {
      ScoreSet s = random_scores(seed, 50 + seed % 30);
      if (pe_min(s) != pe_bruteforce(s)) return "mismatch at seed " + std::to_string(seed);
    }
    return std::string();
  });

  run_check(ctx, "auc equals Mann-Whitney", [&] {
    int sets = ctx.quick ? 30 : 100;
    for (uint64_t seed = 0; seed < static_cast<uint64_t>(sets); ++seed) {
      ScoreSet s = random_scores(1000 + seed, 120);
      if (std::abs(auc(roc(s)) - auc_mann_whitney(s)) > 1e-12)
        return "mismatch at seed " + std::to_string(seed);
    }
    return std::string();
  });

  run_check(ctx, "wauc matches adaptive integration oracle", [&] {
    int sets = ctx.quick ? 8 : 25;
    for (uint64_t seed = 0; seed < static_cast<uint64_t>(sets); ++seed) {
      RocCurve c = roc(random_scores(2000 + seed, 80));
      if (std::abs(wauc(c) - wauc_oracle(c)) > 1e-9)
        return "mismatch at seed " + std::to_string(seed);
    }
    return std::string();
  });

  run_check(ctx, "rank invariance of all three metrics", [] {
    ScoreSet s = random_scores(31337, 100);
    ScoreSet t;
    t.labels = s.labels;
    for (double v : s.scores) t.scores.push_back(std::exp(2.0 * v));
    if (pe_min(s) != pe_min(t)) return std::string("pe not rank invariant");
    if (auc(roc(s)) != auc(roc(t))) return std::string("auc not rank invariant");
    if (wauc(roc(s)) != wauc(roc(t))) return std::string("wauc not rank invariant");
    return std::string();
  });
}

void persistence_checks(Ctx& ctx) {
  run_check(ctx, "checkpoint round-trip + CRC fault injection", [] {
    ModelConfig c;
    c.preprocessing = Preproc::srm;
    c.input_size = 32;
    c.branch_width = 4;
    c.head_channels = 32;
    c.depth = 2;
    c.kernel_set = {1, 3};
    auto net = build_mcnet<float>(c, 5);
    Rng rng(6);
    std::vector<float> img(32 * 32 * 2);
    for (auto& v : img) v = static_cast<float>(rng.uniform() * 255.0);
    (void)net.forward(Tensor<float>::from({2, 1, 32, 32}, std::move(img)), true);
    auto dir = std::filesystem::temp_directory_path() / "mcnet_verify_ckpt";
    std::filesystem::create_directories(dir);
    auto path = (dir / "ck.bin").string();
    Checkpoint ck = snapshot(net);
    ck.seed = 5;
    write_checkpoint(path, ck);
    Checkpoint back = read_checkpoint(path);
    for (size_t i = 0; i < ck.tensors.size(); ++i)
      if (back.tensors[i].data != ck.tensors[i].data)
        return std::string("round-trip not bitwise");

    std::ifstream in(path, std::ios::binary);
    std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    raw[raw.size() / 2] = static_cast<char>(raw[raw.size() / 2] ^ 0x01);
    auto bad = (dir / "ck_bad.bin").string();
    std::ofstream out(bad, std::ios::binary);
    out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
    out.close();
    try {
      read_checkpoint(bad);
      return std::string("corrupted checkpoint was accepted");
    } catch (const RuntimeFail&) {
    }
    std::filesystem::remove_all(dir);
    return std::string();
  });

  run_check(ctx, "split disjointness across seeds", [] {
    for (uint64_t seed = 0; seed < 8; ++seed) {
      std::vector<SourceList> sources(1);
      sources[0].tag = "a";
      for (int i = 0; i < 70; ++i)
        sources[0].pairs.push_back({"c" + std::to_string(i), "s" + std::to_string(i)});
      DatasetManifest m = split_dataset(sources, seed);
      std::vector<std::string> seen;
      for (const auto& e : m.entries) seen.push_back(e.cover_path);
      std::sort(seen.begin(), seen.end());
      if (std::adjacent_find(seen.begin(), seen.end()) != seen.end())
        return "duplicate assignment at seed " + std::to_string(seed);
      if (m.entries.size() != 70) return std::string("entries lost");
    }
    return std::string();
  });

  run_check(ctx, "augmentation keeps pairs aligned", [] {
    Rng rng(3);
    int size = 16;
    std::vector<float> cover(256), delta(256);
    for (auto& v : cover) v = static_cast<float>(rng.below(256));
    for (auto& v : delta) v = static_cast<float>(static_cast<int>(rng.below(3)) - 1);
    std::vector<float> stego(256);
    for (int i = 0; i < 256; ++i)
      stego[static_cast<size_t>(i)] = cover[static_cast<size_t>(i)] + delta[static_cast<size_t>(i)];
    AugmentDraw d{true, true, false};
    std::vector<float> c2 = cover, s2 = stego, d2 = delta;
    apply_augment(c2, size, d);
    apply_augment(s2, size, d);
    apply_augment(d2, size, d);
    for (int i = 0; i < 256; ++i)
      if (s2[static_cast<size_t>(i)] - c2[static_cast<size_t>(i)] != d2[static_cast<size_t>(i)])
        return std::string("pair residual not transform-equivariant");
    return std::string();
  });

  run_check(ctx, "rng stream reproducibility", [] {
    Rng a(99), b(99);
    for (int i = 0; i < 1000; ++i)
      if (a.next_u64() != b.next_u64()) return std::string("rng streams diverge");
    auto t1 = random_init<float>({64, 64}, InitKind::xavier, 7);
    auto t2 = random_init<float>({64, 64}, InitKind::xavier, 7);
    for (int64_t i = 0; i < t1.numel(); ++i)
      if (t1.data()[i] != t2.data()[i]) return std::string("init not reproducible");
    return std::string();
  });
}

}  // namespace

std::vector<VerifyCheck> run_verification(bool quick) {
  std::vector<VerifyCheck> out;
  Ctx ctx{&out, quick};
  bool saved = finite_checks();
  finite_checks() = true;
  gradient_checks(ctx);
  filter_checks(ctx);
  solver_checks(ctx);
  metric_checks(ctx);
  persistence_checks(ctx);
  finite_checks() = saved;
  return out;
}

}  // namespace mcnet
