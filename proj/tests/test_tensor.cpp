#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mcnet/gradcheck.hpp"
#include "mcnet/ops.hpp"
#include "mcnet/optim.hpp"
#include "mcnet/tensor.hpp"

using namespace mcnet;

namespace {

template <typename T>
Tensor<T> random_tensor(const Shape& shape, uint64_t seed, bool requires_grad = false,
                        double scale = 1.0) {
  Rng rng(seed);
  std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.normal() * scale);
  return Tensor<T>::from(shape, std::move(v), requires_grad);
}

struct FiniteGuard {
  FiniteGuard() { finite_checks() = true; }
  ~FiniteGuard() { finite_checks() = false; }
};

}  // namespace

TEST_CASE("conv2d 1x1 identity kernel is bitwise identity") {
  auto x = random_tensor<float>({2, 1, 6, 6}, 1);
  auto w = Tensor<float>::full({1, 1, 1, 1}, 1.0f);
  auto y = conv2d(x, w, Tensor<float>(), 1, 0);
  REQUIRE(y.shape() == x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d 3x3 averaging kernel preserves constant interior") {
  float c = 7.25f;
  auto x = Tensor<float>::full({1, 1, 8, 8}, c);
  auto w = Tensor<float>::full({1, 1, 3, 3}, 1.0f / 9.0f);
  auto y = conv2d(x, w, Tensor<float>(), 1, 1);
  // interior equals c, zero-padded border attenuated
  for (int64_t i = 1; i < 7; ++i)
    for (int64_t j = 1; j < 7; ++j) CHECK(y.data()[i * 8 + j] == doctest::Approx(c).epsilon(1e-6));
  CHECK(y.data()[0] < c);
}

TEST_CASE("conv2d direct and im2col paths agree") {
  for (int stride : {1, 2}) {
    for (int pad : {0, 1, 2}) {
      auto x = random_tensor<float>({2, 3, 9, 11}, 42 + stride * 10 + pad);
      auto w = random_tensor<float>({4, 3, 3, 5}, 7);
      auto b = random_tensor<float>({4}, 8);
      auto y1 = conv2d(x, w, b, stride, pad, ConvAlgo::im2col);
      auto y2 = conv2d(x, w, b, stride, pad, ConvAlgo::direct);
      REQUIRE(y1.shape() == y2.shape());
      for (int64_t i = 0; i < y1.numel(); ++i)
        CHECK(std::abs(y1.data()[i] - y2.data()[i]) <= 1e-5f * (1.0f + std::abs(y1.data()[i])));
    }
  }
}

TEST_CASE("conv2d output shape formula and error paths") {
  auto x = random_tensor<float>({1, 2, 8, 8}, 3);
  auto w = random_tensor<float>({5, 2, 3, 3}, 4);
  auto y = conv2d(x, w, Tensor<float>(), 2, 1);
  CHECK(y.shape() == Shape{1, 5, 4, 4});

  auto wbad = random_tensor<float>({5, 3, 3, 3}, 4);
  CHECK_THROWS_AS(conv2d(x, wbad, Tensor<float>(), 1, 1), RuntimeFail);

  auto tiny = random_tensor<float>({1, 2, 2, 2}, 5);
  auto w5 = random_tensor<float>({1, 2, 5, 5}, 6);
  CHECK_THROWS_AS(conv2d(tiny, w5, Tensor<float>(), 1, 0), RuntimeFail);
}

TEST_CASE("conv2d gradient matches central finite differences (f64)") {
  auto x = random_tensor<double>({2, 3, 8, 8}, 11, true);
  auto w = random_tensor<double>({4, 3, 3, 3}, 12, true, 0.5);
  auto b = random_tensor<double>({4}, 13, true, 0.1);
  auto target = random_tensor<double>({2, 4, 8, 8}, 14);
  auto loss_fn = [&] { return mse_loss(conv2d(x, w, b, 1, 1), target); };
  auto report = grad_check(loss_fn, {{"x", x}, {"w", w}, {"b", b}}, 1e-6);
  INFO(report.summary());
  CHECK(report.ok());
}

TEST_CASE("conv2d strided gradient check (f64)") {
  auto x = random_tensor<double>({1, 2, 9, 9}, 21, true);
  auto w = random_tensor<double>({3, 2, 5, 5}, 22, true, 0.3);
  auto b = random_tensor<double>({3}, 23, true, 0.1);
  auto target = random_tensor<double>({1, 3, 5, 5}, 24);
  auto loss_fn = [&] { return mse_loss(conv2d(x, w, b, 2, 2), target); };
  auto report = grad_check(loss_fn, {{"x", x}, {"w", w}, {"b", b}}, 1e-6);
  INFO(report.summary());
  CHECK(report.ok());
}

TEST_CASE("batch_norm train mode normalizes per channel") {
  auto x = random_tensor<float>({4, 3, 5, 5}, 31, false, 3.0);
  for (int64_t i = 0; i < x.numel(); ++i) x.data()[i] += 2.0f;  // shift mean
  auto gamma = Tensor<float>::full({3}, 1.0f);
  auto beta = Tensor<float>::zeros({3});
  BnStats<float> stats;
  auto y = batch_norm(x, gamma, beta, stats, true);
  int64_t plane = 25, N = 4, C = 3;
  for (int64_t c = 0; c < C; ++c) {
    double mean = 0, var = 0;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t i = 0; i < plane; ++i) mean += y.data()[(n * C + c) * plane + i];
    mean /= static_cast<double>(N * plane);
    for (int64_t n = 0; n < N; ++n)
      for (int64_t i = 0; i < plane; ++i) {
        double d = y.data()[(n * C + c) * plane + i] - mean;
        var += d * d;
      }
    var /= static_cast<double>(N * plane);
    CHECK(std::abs(mean) <= 1e-6);
    CHECK(std::abs(var - 1.0) <= 1e-4);
  }
}

TEST_CASE("batch_norm affine collapse: gamma=0 beta=5 gives all 5") {
  auto x = random_tensor<float>({2, 2, 4, 4}, 32);
  auto gamma = Tensor<float>::zeros({2});
  auto beta = Tensor<float>::full({2}, 5.0f);
  BnStats<float> stats;
  auto y = batch_norm(x, gamma, beta, stats, true);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 5.0f);
}

TEST_CASE("batch_norm eval before train fails; after train uses running stats") {
  auto x = random_tensor<float>({2, 2, 4, 4}, 33);
  auto gamma = Tensor<float>::full({2}, 1.0f);
  auto beta = Tensor<float>::zeros({2});
  BnStats<float> stats;
  CHECK_THROWS_AS(batch_norm(x, gamma, beta, stats, false), RuntimeFail);
  (void)batch_norm(x, gamma, beta, stats, true);
  auto y = batch_norm(x, gamma, beta, stats, false);
  auto y2 = batch_norm(x, gamma, beta, stats, false);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == y2.data()[i]);
}

TEST_CASE("batch_norm gradient check on 2x3x4x4 (f64)") {
  auto x = random_tensor<double>({2, 3, 4, 4}, 34, true, 2.0);
  auto gamma = random_tensor<double>({3}, 35, true, 0.5);
  for (int64_t i = 0; i < 3; ++i) gamma.data()[i] += 1.0;
  auto beta = random_tensor<double>({3}, 36, true, 0.5);
  auto target = random_tensor<double>({2, 3, 4, 4}, 37);
  auto loss_fn = [&] {
    BnStats<double> stats;  // fresh stats: loss depends on batch statistics only
    return mse_loss(batch_norm(x, gamma, beta, stats, true), target);
  };
  auto report = grad_check(loss_fn, {{"x", x}, {"gamma", gamma}, {"beta", beta}}, 1e-6);
  INFO(report.summary());
  CHECK(report.ok());
}

TEST_CASE("activation point values") {
  auto x = Tensor<float>::from({1, 2, 1, 1}, {-4.0f, 4.0f});
  auto alpha = Tensor<float>::full({2}, 0.25f);
  auto y = prelu(x, alpha);
  CHECK(y.data()[0] == doctest::Approx(-1.0f));
  CHECK(y.data()[1] == doctest::Approx(4.0f));

  CHECK(sigmoid(Tensor<float>::scalar(0.0f)).item() == doctest::Approx(0.5f));
  CHECK(tanh_act(Tensor<float>::scalar(0.0f)).item() == doctest::Approx(0.0f));
  CHECK(leaky_relu(Tensor<float>::scalar(-2.0f)).item() == doctest::Approx(-0.02f));
  CHECK(relu(Tensor<float>::scalar(-2.0f)).item() == 0.0f);
}

TEST_CASE("prelu dalpha matches finite differences (f64)") {
  auto x = random_tensor<double>({2, 3, 4, 4}, 41, true);
  auto alpha = Tensor<double>::from({3}, {0.25, 0.1, 0.4}, true);
  auto target = random_tensor<double>({2, 3, 4, 4}, 42);
  auto loss_fn = [&] { return mse_loss(prelu(x, alpha), target); };
  auto report = grad_check(loss_fn, {{"x", x}, {"alpha", alpha}}, 1e-6);
  INFO(report.summary());
  CHECK(report.ok());
}

TEST_CASE("activations gradient checks (f64)") {
  auto x = random_tensor<double>({2, 2, 3, 3}, 43, true);
  auto target = random_tensor<double>({2, 2, 3, 3}, 44);
  for (int kind = 0; kind < 4; ++kind) {
    auto loss_fn = [&]() -> Tensor<double> {
      Tensor<double> y;
      switch (kind) {
        case 0: y = sigmoid(x); break;
        case 1: y = tanh_act(x); break;
        case 2: y = relu(x); break;
        default: y = leaky_relu(x); break;
      }
      return mse_loss(y, target);
    };
    auto report = grad_check(loss_fn, {{"x", x}}, 1e-6);
    INFO("kind=" << kind << " " << report.summary());
    CHECK(report.ok());
  }
}

TEST_CASE("abs layer values, sign rule, and grad check away from zero") {
  auto x = Tensor<float>::from({1, 1, 1, 3}, {-1.0f, 0.0f, 2.0f});
  auto y = abs_op(x);
  CHECK(y.data()[0] == 1.0f);
  CHECK(y.data()[1] == 0.0f);
  CHECK(y.data()[2] == 2.0f);

  // grad at x=-3 with upstream 1 is -1; subgradient at 0 is 0
  auto xg = Tensor<double>::from({3}, {-3.0, 0.0, 2.0}, true);
  auto s = abs_op(xg);
  auto total = mse_loss(s, Tensor<double>::zeros({3}));  // d|x|/dx probed via chain below
  (void)total;
  // direct seed: sum(|x|) via mse against 0 is quadratic; instead probe |x| with upstream 1
  auto xg2 = Tensor<double>::from({1}, {-3.0}, true);
  auto y2 = abs_op(xg2);
  y2.backward();
  CHECK(xg2.grad_vec()[0] == -1.0);

  auto x3 = random_tensor<double>({2, 2, 3, 3}, 45, true);
  for (int64_t i = 0; i < x3.numel(); ++i)
    if (std::abs(x3.data()[i]) < 1e-3) x3.data()[i] = 0.5;  // probe only away from the kink
  auto target = random_tensor<double>({2, 2, 3, 3}, 46);
  auto loss_fn = [&] { return mse_loss(abs_op(x3), target); };
  auto report = grad_check(loss_fn, {{"x", x3}}, 1e-6);
  INFO(report.summary());
  CHECK(report.ok());
}

TEST_CASE("concat_channels shapes, identity, and round-trip gradient split") {
  auto a = random_tensor<float>({1, 2, 4, 4}, 51, true);
  auto b = random_tensor<float>({1, 3, 4, 4}, 52, true);
  auto y = concat_channels<float>({a, b});
  CHECK(y.shape() == Shape{1, 5, 4, 4});
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(y.data()[i] == a.data()[i]);
  for (int64_t i = 0; i < b.numel(); ++i) CHECK(y.data()[a.numel() + i] == b.data()[i]);

  auto single = concat_channels<float>({a});
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(single.data()[i] == a.data()[i]);

  auto bad = random_tensor<float>({1, 1, 3, 4}, 53);
  CHECK_THROWS_AS(concat_channels<float>({a, bad}), RuntimeFail);
}

TEST_CASE("avg_pool and global_avg_pool values") {
  auto x = Tensor<float>::from({1, 1, 2, 2}, {1, 3, 5, 7});
  auto g = global_avg_pool(x);
  CHECK(g.shape() == Shape{1, 1});
  CHECK(g.item() == doctest::Approx(4.0f));

  auto c = Tensor<float>::full({2, 3, 4, 4}, 2.5f);
  auto gc = global_avg_pool(c);
  for (int64_t i = 0; i < gc.numel(); ++i) CHECK(gc.data()[i] == doctest::Approx(2.5f));

  auto p = avg_pool(x, 2, 2, 0);
  CHECK(p.shape() == Shape{1, 1, 1, 1});
  CHECK(p.item() == doctest::Approx(4.0f));
  CHECK_THROWS_AS(avg_pool(x, 5, 1, 0), RuntimeFail);
}

TEST_CASE("pooling gradient checks (f64)") {
  auto x = random_tensor<double>({2, 2, 6, 6}, 61, true);
  auto t1 = random_tensor<double>({2, 2, 3, 3}, 62);
  auto r1 = grad_check([&] { return mse_loss(avg_pool(x, 3, 2, 1), t1); }, {{"x", x}}, 1e-6);
  INFO(r1.summary());
  CHECK(r1.ok());

  auto t2 = random_tensor<double>({2, 2}, 63);
  auto r2 = grad_check([&] { return mse_loss(global_avg_pool(x), t2); }, {{"x", x}}, 1e-6);
  INFO(r2.summary());
  CHECK(r2.ok());
}

TEST_CASE("softmax symmetry, stabilization, row sums") {
  FiniteGuard guard;
  auto s = softmax_rows(Tensor<float>::from({1, 2}, {0.0f, 0.0f}));
  CHECK(s.data()[0] == doctest::Approx(0.5f));
  CHECK(s.data()[1] == doctest::Approx(0.5f));

  auto big = softmax_rows(Tensor<float>::from({1, 2}, {1000.0f, 0.0f}));
  CHECK(std::isfinite(big.data()[0]));
  CHECK(big.data()[0] == doctest::Approx(1.0f));
  CHECK(big.data()[1] == doctest::Approx(0.0f));

  auto r = softmax_rows(random_tensor<float>({7, 5}, 71, false, 3.0));
  for (int64_t i = 0; i < 7; ++i) {
    double sum = 0;
    for (int64_t j = 0; j < 5; ++j) {
      double v = r.data()[i * 5 + j];
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-6);
  }
}

TEST_CASE("fc + softmax joint gradient check (f64)") {
  auto x = random_tensor<double>({3, 6}, 72, true);
  auto w = random_tensor<double>({2, 6}, 73, true, 0.5);
  auto b = random_tensor<double>({2}, 74, true, 0.1);
  std::vector<int> labels = {0, 1, 0};
  auto loss_fn = [&] {
    auto probs = softmax_rows(fully_connected(x, w, b));
    return bce_loss(take_column(probs, 1), labels);
  };
  auto report = grad_check(loss_fn, {{"x", x}, {"w", w}, {"b", b}}, 1e-6);
  INFO(report.summary());
  CHECK(report.ok());
}

TEST_CASE("linear layer gradient is exact to 1e-9") {
  auto x = random_tensor<double>({4, 5}, 75, true);
  auto w = random_tensor<double>({3, 5}, 76, true);
  auto b = random_tensor<double>({3}, 77, true);
  auto t = random_tensor<double>({4, 3}, 78);
  auto report = grad_check([&] { return mse_loss(fully_connected(x, w, b), t); },
                           {{"x", x}, {"w", w}, {"b", b}}, 1e-9);
  INFO(report.summary());
  CHECK(report.ok());
}

TEST_CASE("mse_loss values and gradient") {
  auto a = random_tensor<float>({2, 3}, 81);
  CHECK(mse_loss(a, a).item() == 0.0f);

  auto b = a.clone_detached();
  for (int64_t i = 0; i < b.numel(); ++i) b.data()[i] += 2.0f;
  CHECK(mse_loss(b, a).item() == doctest::Approx(4.0f));

  auto p = random_tensor<double>({3, 4}, 82, true);
  auto t = random_tensor<double>({3, 4}, 83);
  auto report = grad_check([&] { return mse_loss(p, t); }, {{"p", p}}, 1e-8);
  INFO(report.summary());
  CHECK(report.ok());

  CHECK_THROWS_AS(mse_loss(a, random_tensor<float>({3, 2}, 84)), RuntimeFail);
}

TEST_CASE("bce_loss: ln 2 at maximal uncertainty, clamping, empty batch") {
  auto half = Tensor<float>::full({6}, 0.5f);
  std::vector<int> labels = {0, 1, 1, 0, 1, 0};
  CHECK(bce_loss(half, labels).item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));

  auto exact = Tensor<float>::from({2}, {0.0f, 1.0f});
  std::vector<int> l2 = {0, 1};
  float v = bce_loss(exact, l2).item();
  CHECK(v >= 0.0f);
  CHECK(v <= -std::log(1.0f - 1e-7f) + 1e-10f);

  CHECK_THROWS_AS(bce_loss(Tensor<float>::zeros({0}), {}), RuntimeFail);
}

TEST_CASE("no op emits NaN/Inf for finite inputs") {
  FiniteGuard guard;
  auto x = random_tensor<float>({2, 4, 6, 6}, 91, false, 100.0);
  auto w = random_tensor<float>({8, 4, 3, 3}, 92, false, 10.0);
  auto y = conv2d(x, w, Tensor<float>(), 1, 1);
  auto a = abs_op(tanh_act(sigmoid(y)));
  auto g = global_avg_pool(a);
  auto sm = softmax_rows(g);
  sm.throw_if_not_finite("pipeline");
  auto p = take_column(softmax_rows(Tensor<float>::from({1, 2}, {-1000.0f, 1000.0f})), 1);
  CHECK(bce_loss(p, {1}).item() >= 0.0f);
}

TEST_CASE("adamax: zero gradient leaves parameters bitwise unchanged") {
  Parameter<float> p;
  p.name = "w";
  p.tensor = Tensor<float>::from({3}, {1.5f, -2.25f, 0.125f}, true);
  auto before = p.tensor.values();
  Adamax<float> opt;
  p.tensor.zero_grad();
  opt.step({&p}, 1e-3f);
  for (size_t i = 0; i < before.size(); ++i) CHECK(p.tensor.values()[i] == before[i]);
  CHECK(p.t == 1);
}

TEST_CASE("adamax: single-scalar hand-computed update") {
  Parameter<double> p;
  p.name = "w";
  p.tensor = Tensor<double>::scalar(0.0, true);
  p.tensor.grad()[0] = 1.0;
  Adamax<double> opt;
  opt.step({&p}, 1e-3);
  // m=0.1, u=1, bias corr 1-0.9 = 0.1 -> delta = -1e-3 * (0.1/0.1)/(1+eps)
  double expect = -1e-3 * 1.0 / (1.0 + 1e-8);
  CHECK(p.tensor.item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("adamax: 10 steps on f(t)=t^2 strictly decreases |t|") {
  Parameter<double> p;
  p.name = "w";
  p.tensor = Tensor<double>::scalar(1.0, true);
  Adamax<double> opt;
  double prev = 1.0;
  for (int i = 0; i < 10; ++i) {
    p.tensor.zero_grad();
    p.tensor.grad()[0] = 2.0 * p.tensor.item();
    opt.step({&p}, 0.01);
    double cur = std::abs(p.tensor.item());
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("bmm/softmax/scale/add compose (attention building blocks) grad check") {
  auto q = random_tensor<double>({2, 4, 6}, 101, true, 0.5);
  auto k = random_tensor<double>({2, 4, 6}, 102, true, 0.5);
  auto v = random_tensor<double>({2, 8, 6}, 103, true, 0.5);
  auto g = Tensor<double>::scalar(0.7, true);
  auto x0 = random_tensor<double>({2, 8, 6}, 104, true, 0.5);
  auto target = random_tensor<double>({2, 8, 6}, 105);
  auto loss_fn = [&] {
    auto energy = bmm(q, k, true, false);       // [2,6,6]
    auto attn = softmax_rows(energy);           // rows sum to 1
    auto o = bmm(v, attn, false, true);         // [2,8,6]
    return mse_loss(add(scale_by(o, g), x0), target);
  };
  auto report =
      grad_check(loss_fn, {{"q", q}, {"k", k}, {"v", v}, {"gamma", g}, {"x0", x0}}, 1e-6);
  INFO(report.summary());
  CHECK(report.ok());
}

TEST_CASE("same-seed rng reproducibility and init statistics") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng g(7);
  double sum = 0, sq = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double v = g.normal() * 0.01;
    sum += v;
    sq += v * v;
  }
  double mean = sum / n;
  double sd = std::sqrt(sq / n - mean * mean);
  CHECK(sd > 0.009);
  CHECK(sd < 0.011);
}
