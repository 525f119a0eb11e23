#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mcnet/filters.hpp"
#include "mcnet/ops.hpp"

using namespace mcnet;

namespace {

double kernel_sum(const std::array<double, 25>& k) {
  double s = 0;
  for (double v : k) s += v;
  return s;
}

}  // namespace

TEST_CASE("srm bank: 30 kernels, all zero-sum") {
  KernelBank bank = srm_bank();
  CHECK(bank.size() == 30);
  CHECK(bank.source == BankSource::srm);
  for (size_t k = 0; k < bank.size(); ++k) {
    INFO("kernel " << bank.names[k]);
    CHECK(std::abs(kernel_sum(bank.kernels[k])) <= 1e-9);
  }
}

TEST_CASE("srm bank: small-support kernels keep a zero outer ring") {
  KernelBank bank = srm_bank();
  // the 3x3 SQUARE kernel lives padded inside the 5x5 grid
  bool found = false;
  for (size_t k = 0; k < bank.size(); ++k) {
    if (bank.names[k] != "sq3") continue;
    found = true;
    const auto& g = bank.kernels[k];
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 5; ++c)
        if (r == 0 || r == 4 || c == 0 || c == 4) CHECK(g[static_cast<size_t>(r * 5 + c)] == 0.0);
    CHECK(g[12] == -1.0);  // -4/4 at center
  }
  CHECK(found);
}

TEST_CASE("srm bank is byte-identical across calls") {
  CHECK(srm_bank().to_text() == srm_bank().to_text());
}

TEST_CASE("kv kernel: single 5x5, zero-sum, kills constant images") {
  KernelBank kv = kv_kernel();
  CHECK(kv.size() == 1);
  CHECK(std::abs(kernel_sum(kv.kernels[0])) <= 1e-9);
  CHECK(kv.kernels[0][12] == -1.0);  // -12/12

  auto w = kv.to_weight<float>();
  auto img = Tensor<float>::full({1, 1, 12, 12}, 173.0f);
  auto y = conv2d(img, w, Tensor<float>(), 1, 0);  // valid region only
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(std::abs(y.data()[i]) <= 1e-4f);
}

TEST_CASE("gabor bank: 2 scales x 15 orientations, zero-sum, unit center pre-subtraction") {
  KernelBank bank = gabor_bank();
  CHECK(bank.size() == 30);
  for (size_t k = 0; k < bank.size(); ++k) {
    INFO("kernel " << bank.names[k]);
    CHECK(std::abs(kernel_sum(bank.kernels[k])) <= 1e-9);
  }

  GaborParams raw;
  raw.mean_subtract = false;
  KernelBank pre = gabor_bank(raw);
  for (size_t k = 0; k < pre.size(); ++k) CHECK(pre.kernels[k][12] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("gabor theta=0 kernel equals its own vertical mirror") {
  KernelBank bank = gabor_bank();
  for (size_t k : {size_t(0), size_t(15)}) {
    const auto& g = bank.kernels[k];
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 5; ++c)
        CHECK(g[static_cast<size_t>(r * 5 + c)] ==
              doctest::Approx(g[static_cast<size_t>((4 - r) * 5 + c)]).epsilon(1e-12));
  }
}

TEST_CASE("gabor bank matches frozen reference values to 1e-12") {
  // independently computed from the closed form
  static const double k0[25] = {
      -0.11895325055192779, -0.10560457509603739, 0.016379181999508524, -0.10560457509603739,
      -0.11895325055192779, -0.11894332535250622, -0.059118712458352214, 0.48757455847552922,
      -0.059118712458352214, -0.11894332535250622, -0.11893503736441551, -0.020300925574422646,
      0.88104389876289579, -0.020300925574422646, -0.11893503736441551, -0.11894332535250622,
      -0.059118712458352214, 0.48757455847552922, -0.059118712458352214, -0.11894332535250622,
      -0.11895325055192779, -0.10560457509603739, 0.016379181999508524, -0.10560457509603739,
      -0.11895325055192779};
  static const double k15[25] = {
      0.048788824308898283, -0.35309421851277106, 0.59548209524277973, -0.35309421851277106,
      0.048788824308898283, 0.076014322476401927, -0.50872205450976593, 0.87144833811474176,
      -0.50872205450976593, 0.076014322476401927, 0.087606611192827852, -0.5749865098409489,
      0.98895143553014631, -0.5749865098409489, 0.087606611192827852, 0.076014322476401927,
      -0.50872205450976593, 0.87144833811474176, -0.50872205450976593, 0.076014322476401927,
      0.048788824308898283, -0.35309421851277106, 0.59548209524277973, -0.35309421851277106,
      0.048788824308898283};
  static const double abs_sums[30] = {
      3.7779027594259422, 2.4228662829705039, 3.027938522740246,  2.5575994996035805,
      3.0465729232094114, 2.9398900158108612, 2.4763186746727084, 3.2928901231593311,
      3.2928901231593311, 2.4763186746727079, 2.9398900158108652, 3.0465729232094114,
      2.55759949960358,   3.0279385227402433, 2.4228662829705039, 9.1944762235440933,
      6.5051370836815012, 6.1187192386088149, 6.2424341768407423, 7.3355673869640308,
      6.2800409959915156, 6.1624083946619477, 8.4107237808037656, 8.4107237808037638,
      6.162408394661945,  6.2800409959915129, 7.3355673869640254, 6.2424341768407432,
      6.1187192386088141, 6.5051370836815012};

  KernelBank bank = gabor_bank();
  for (int i = 0; i < 25; ++i) {
    CHECK(std::abs(bank.kernels[0][static_cast<size_t>(i)] - k0[i]) <= 1e-12);
    CHECK(std::abs(bank.kernels[15][static_cast<size_t>(i)] - k15[i]) <= 1e-12);
  }
  for (size_t k = 0; k < 30; ++k) {
    double s = 0;
    for (double v : bank.kernels[k]) s += std::abs(v);
    CHECK(std::abs(s - abs_sums[k]) <= 1e-11);
  }

  // pure function of its parameters
  KernelBank again = gabor_bank();
  for (size_t k = 0; k < 30; ++k)
    for (int i = 0; i < 25; ++i)
      CHECK(bank.kernels[k][static_cast<size_t>(i)] == again.kernels[k][static_cast<size_t>(i)]);
}

TEST_CASE("bank text round-trip is bit-exact") {
  for (const KernelBank& bank : {srm_bank(), kv_kernel(), gabor_bank()}) {
    KernelBank back = KernelBank::from_text(bank.to_text());
    REQUIRE(back.size() == bank.size());
    CHECK(back.source == bank.source);
    for (size_t k = 0; k < bank.size(); ++k) {
      CHECK(back.names[k] == bank.names[k]);
      for (int i = 0; i < 25; ++i)
        CHECK(back.kernels[k][static_cast<size_t>(i)] == bank.kernels[k][static_cast<size_t>(i)]);
    }
  }
  CHECK_THROWS_AS(KernelBank::from_text("source srm\ncount 1\nkernel x\n1 2 3"), RuntimeFail);
}

TEST_CASE("random_init determinism and moments") {
  auto a = random_init<float>({100, 100}, InitKind::xavier, 99);
  auto b = random_init<float>({100, 100}, InitKind::xavier, 99);
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);

  // xavier with fan_in = fan_out = 100: variance 2/200 = 0.01
  double sq = 0;
  for (int64_t i = 0; i < a.numel(); ++i) sq += a.data()[i] * a.data()[i];
  double var = sq / static_cast<double>(a.numel());
  CHECK(var > 0.009);
  CHECK(var < 0.011);

  auto g = random_init<double>({100000}, InitKind::gaussian, 5, 0.0, 0.01);
  double s2 = 0;
  for (int64_t i = 0; i < g.numel(); ++i) s2 += g.data()[i] * g.data()[i];
  double sd = std::sqrt(s2 / static_cast<double>(g.numel()));
  CHECK(sd > 0.009);
  CHECK(sd < 0.011);

  auto k = random_init<double>({64, 16, 3, 3}, InitKind::kaiming, 6);
  double ks = 0;
  for (int64_t i = 0; i < k.numel(); ++i) ks += k.data()[i] * k.data()[i];
  double kvar = ks / static_cast<double>(k.numel());
  double expect = 2.0 / (16 * 9);
  CHECK(kvar > expect * 0.9);
  CHECK(kvar < expect * 1.1);
}

TEST_CASE("srm-initialized convolution zeroes constant images in the interior") {
  auto w = srm_bank().to_weight<float>();
  auto img = Tensor<float>::full({1, 1, 16, 16}, 200.0f);
  auto y = conv2d(img, w, Tensor<float>(), 1, 2);
  // interior (away from zero padding) responds zero to DC input
  for (int64_t k = 0; k < 30; ++k)
    for (int64_t r = 2; r < 14; ++r)
      for (int64_t c = 2; c < 14; ++c)
        CHECK(std::abs(y.data()[(k * 16 + r) * 16 + c]) <= 1e-3f);
}
