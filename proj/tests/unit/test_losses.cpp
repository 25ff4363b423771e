#include <doctest.h>

#include <cmath>
#include <functional>
#include <numbers>

#include "densedet/autodiff/gradcheck.hpp"
#include "densedet/autodiff/nn.hpp"
#include "densedet/autodiff/ops.hpp"
#include "densedet/error.hpp"
#include "densedet/losses.hpp"
#include "oracles.hpp"

using namespace densedet;
using namespace densedet::ad;

namespace {

Tensor C(Shape s, std::vector<double> v) { return Tensor::constant(std::move(s), std::move(v)); }

const double kLn2 = std::numbers::ln2;

std::vector<double> probs(std::size_t n, std::uint64_t seed) {
  return oracle::random_vector(n, seed, 0.02, 0.98);
}

std::vector<std::uint8_t> random_bits(std::size_t n, std::uint64_t seed, double p_one) {
  const auto u = oracle::random_vector(n, seed, 0.0, 1.0);
  std::vector<std::uint8_t> b(n);
  for (std::size_t i = 0; i < n; ++i) b[i] = u[i] < p_one;
  return b;
}

// Scalar references written directly from the loss definitions.
double mimic_oracle(const std::vector<double>& s, const std::vector<double>& t, double beta,
                    double gamma) {
  double nz = 0, z = 0, snz = 0, sz = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double d2 = (s[i] - t[i]) * (s[i] - t[i]);
    if (t[i] != 0.0) {
      nz += 1;
      snz += d2;
    } else {
      z += 1;
      sz += d2;
    }
  }
  return (nz > 0 ? beta / nz * snz : 0.0) + (z > 0 ? gamma / z * sz : 0.0);
}

double mask_oracle(const std::vector<double>& p, const std::vector<std::uint8_t>& y,
                   std::size_t batch) {
  const std::size_t per = p.size() / batch;
  double total = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    double nf = 0;
    for (std::size_t j = 0; j < per; ++j) nf += y[b * per + j];
    const double nb = static_cast<double>(per) - nf;
    for (std::size_t j = 0; j < per; ++j) {
      const std::size_t i = b * per + j;
      total += y[i] ? (nf > 0 ? -(nb / nf) * std::log(p[i]) : 0.0) : -std::log(1.0 - p[i]);
    }
  }
  return total / static_cast<double>(batch);
}

double focal_oracle(const std::vector<double>& p, const std::vector<double>& t, double thr,
                    bool exact) {
  double peaks = 0, total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool peak = exact ? t[i] == 1.0 : t[i] > thr;
    if (peak) {
      peaks += 1;
      total += -(1 - p[i]) * (1 - p[i]) * std::log(p[i]);
    } else {
      const double w = std::pow(1 - t[i], 4);
      total += -w * p[i] * p[i] * std::log(1 - p[i]);
    }
  }
  return total / std::max(peaks, 1.0);
}

void check_scalar(const Tensor& loss, double expected, double tol = 1e-12) {
  REQUIRE(loss.numel() == 1);
  CHECK(std::abs(loss.item() - expected) <= tol * std::max(1.0, std::abs(expected)));
}

}  // namespace

TEST_CASE("feature mimicking") {
  SUBCASE("identical features give zero") {
    const auto v = oracle::random_vector(24, 1);
    check_scalar(feature_mimic(C({24}, v), C({24}, v), 10, 20), 0.0, 0.0);
  }
  SUBCASE("single nonzero teacher element against a zero student gives beta") {
    const auto f = C({1}, {0.0}), g = C({1}, {0.7});
    check_scalar(l_s2d(C({1}, {0.0}), C({1}, {1.0}), g, g, 10, 20), 10.0);
    check_scalar(feature_mimic(f, C({1}, {1.0}), 10, 20), 10.0);
  }
  SUBCASE("random tensors with structural zeros match the scalar oracle") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto t = oracle::random_vector(60, 100 + seed);
      const auto zero = random_bits(60, 200 + seed, 0.4);
      for (std::size_t i = 0; i < t.size(); ++i) if (zero[i]) t[i] = 0.0;
      const auto s = oracle::random_vector(60, 300 + seed);
      check_scalar(feature_mimic(C({3, 20}, s), C({3, 20}, t), 10, 20),
                   mimic_oracle(s, t, 10, 20));
    }
  }
  SUBCASE("an all-zero teacher uses only the gamma term") {
    const auto s = oracle::random_vector(8, 4);
    const std::vector<double> t(8, 0.0);
    check_scalar(feature_mimic(C({8}, s), C({8}, t), 10, 20), mimic_oracle(s, t, 10, 20));
  }
  SUBCASE("teacher tensors never receive gradient") {
    Tape tape;
    const auto s = tape.leaf({6}, oracle::random_vector(6, 5));
    const auto t = tape.leaf({6}, {0, 1, 0, 2, 3, 0});
    tape.backward(l_s2d(s, t, s, t, 10, 20));
    CHECK(!s.grad().empty());
    for (double g : t.grad()) CHECK(g == 0.0);
  }
  SUBCASE("shape mismatch is reported") {
    CHECK_THROWS_AS(feature_mimic(C({2}, {1, 2}), C({3}, {1, 2, 3}), 10, 20), Error);
  }
}

TEST_CASE("occupancy mask loss") {
  SUBCASE("one foreground and one background voxel at 0.5 gives 2 ln 2") {
    check_scalar(l_mask(C({1, 2}, {0.5, 0.5}), std::vector<std::uint8_t>{1, 0}), 2 * kLn2);
  }
  SUBCASE("near-perfect prediction is near zero") {
    const auto l = l_mask(C({1, 3}, {1.0, 1e-15, 1e-15}), std::vector<std::uint8_t>{1, 0, 0});
    CHECK(l.item() >= 0.0);
    CHECK(l.item() < 1e-12);
  }
  SUBCASE("random batches match the scalar oracle") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto p = probs(2 * 40, 10 + seed);
      const auto y = random_bits(p.size(), 20 + seed, 0.2);
      check_scalar(l_mask(C({2, 1, 2, 4, 5}, p), y), mask_oracle(p, y, 2));
    }
  }
  SUBCASE("a sample without foreground keeps only its background term") {
    const std::vector<double> p{0.3, 0.6};
    check_scalar(l_mask(C({1, 2}, p), std::vector<std::uint8_t>{0, 0}),
                 -std::log(0.7) - std::log(0.4));
  }
}

TEST_CASE("offset loss") {
  SUBCASE("exact offsets give zero") {
    const std::vector<double> c{0.2, 0.6, 1.0, 1.4, -0.5, 0.1};
    const std::vector<double> gt{0.5, 0.9, 1.3, 1.0, 0.0, 0.2};
    std::vector<double> off(6);
    for (std::size_t i = 0; i < 6; ++i) off[i] = gt[i] - c[i];
    check_scalar(l_offset(C({1, 3, 2}, off), c, gt, std::vector<std::uint8_t>{1, 1}), 0.0, 1e-15);
  }
  SUBCASE("single foreground voxel off by 0.1 in x gives 0.1") {
    const std::vector<double> c{0, 0, 0};
    check_scalar(l_offset(C({1, 3, 1}, {0.1, 0, 0}), c, std::vector<double>{0, 0, 0},
                          std::vector<std::uint8_t>{1}),
                 0.1);
  }
  SUBCASE("no foreground gives zero") {
    const std::vector<double> c{0, 0, 0};
    check_scalar(l_offset(C({1, 3, 1}, {5, 5, 5}), c, std::vector<double>{0, 0, 0},
                          std::vector<std::uint8_t>{0}),
                 0.0, 0.0);
  }
  SUBCASE("random case matches the loop oracle") {
    const std::size_t n = 2, v = 12;
    const auto off = oracle::random_vector(n * 3 * v, 30);
    const auto c = oracle::random_vector(3 * v, 31);
    const auto gt = oracle::random_vector(n * 3 * v, 32);
    const auto fg = random_bits(n * v, 33, 0.5);
    double total = 0, nf = 0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t j = 0; j < v; ++j) {
        if (!fg[b * v + j]) continue;
        nf += 1;
        for (std::size_t a = 0; a < 3; ++a)
          total += std::abs(off[(b * 3 + a) * v + j] + c[a * v + j] - gt[(b * 3 + a) * v + j]);
      }
    check_scalar(l_offset(C({n, 3, 1, 3, 4}, off), c, gt, fg), total / nf);
  }
}

TEST_CASE("focal heatmap loss") {
  SUBCASE("1x1 peak at p = 0.5 gives 0.25 ln 2") {
    check_scalar(focal_heatmap(C({1, 1, 1, 1}, {0.5}), std::vector<double>{1.0}), 0.25 * kLn2);
  }
  SUBCASE("near-perfect prediction is near zero") {
    const auto l = focal_heatmap(C({1, 1, 1, 3}, {1.0 - 1e-9, 1e-9, 1e-9}),
                                 std::vector<double>{1.0, 0.3, 0.0});
    CHECK(l.item() >= 0.0);
    CHECK(l.item() < 1e-12);
  }
  SUBCASE("random maps match the scalar oracle") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto p = probs(2 * 3 * 25, 40 + seed);
      auto t = oracle::random_vector(p.size(), 50 + seed, 0.0, 1.0);
      for (std::size_t i = 0; i < t.size(); i += 17) t[i] = 1.0;
      check_scalar(focal_heatmap(C({2, 3, 5, 5}, p), t), focal_oracle(p, t, 0, true));
    }
  }
  SUBCASE("no peaks normalizes by one") {
    const auto p = probs(9, 60);
    const std::vector<double> t(9, 0.2);
    check_scalar(focal_heatmap(C({1, 1, 3, 3}, p), t), focal_oracle(p, t, 0, true));
  }
}

TEST_CASE("regression loss") {
  SUBCASE("perfect prediction gives zero") {
    const auto t = oracle::random_vector(8 * 4, 70);
    check_scalar(l_reg(C({1, 8, 2, 2}, t), t, std::vector<std::uint8_t>{1, 0, 1, 0}), 0.0, 0.0);
  }
  SUBCASE("one peak with one channel off by 0.2 gives 0.2 / R") {
    std::vector<double> t(8 * 4, 0.0), p(8 * 4, 0.0);
    p[3 * 4 + 2] = 0.2;
    check_scalar(l_reg(C({1, 8, 2, 2}, p), t, std::vector<std::uint8_t>{0, 0, 1, 0}), 0.2 / 8);
  }
  SUBCASE("errors away from peaks are ignored") {
    std::vector<double> t(8 * 4, 0.0), p(8 * 4, 5.0);
    check_scalar(l_reg(C({1, 8, 2, 2}, p), t, std::vector<std::uint8_t>{0, 0, 0, 0}), 0.0, 0.0);
  }
  SUBCASE("random case matches the loop oracle") {
    const std::size_t n = 2, r = 8, hw = 9;
    const auto p = oracle::random_vector(n * r * hw, 71);
    const auto t = oracle::random_vector(n * r * hw, 72);
    const auto pk = random_bits(n * hw, 73, 0.3);
    double total = 0, count = 0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t c = 0; c < hw; ++c) {
        if (!pk[b * hw + c]) continue;
        count += 1;
        for (std::size_t k = 0; k < r; ++k)
          total += std::abs(p[(b * r + k) * hw + c] - t[(b * r + k) * hw + c]);
      }
    check_scalar(l_reg(C({n, r, 3, 3}, p), t, pk), total / (count * r));
  }
}

TEST_CASE("heatmap distillation") {
  SUBCASE("student equal to a saturated teacher is near zero") {
    const std::vector<double> t{1.0 - 1e-9, 1e-9, 1e-9, 1.0 - 1e-9};
    const auto l = hm_distill(C({1, 1, 2, 2}, t), C({1, 1, 2, 2}, t));
    CHECK(l.item() >= 0.0);
    CHECK(l.item() < 1e-6);
  }
  SUBCASE("a teacher at 0.5 has no peaks and only the background term") {
    const auto p = probs(4, 80);
    const std::vector<double> t(4, 0.5);
    double expected = 0;
    for (double v : p) expected += -std::pow(0.5, 4) * v * v * std::log(1 - v);
    check_scalar(hm_distill(C({1, 1, 2, 2}, p), C({1, 1, 2, 2}, t)), expected);
  }
  SUBCASE("random pairs match the scalar oracle") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto p = probs(50, 90 + seed);
      auto t = oracle::random_vector(50, 95 + seed, 0.0, 1.0);
      check_scalar(hm_distill(C({2, 1, 5, 5}, p), C({2, 1, 5, 5}, t)),
                   focal_oracle(p, t, 0.9, false));
    }
  }
  SUBCASE("the teacher heatmap never receives gradient") {
    Tape tape;
    const auto s = tape.leaf({1, 1, 2, 2}, probs(4, 99));
    const auto t = tape.leaf({1, 1, 2, 2}, {0.95, 0.2, 0.5, 0.0});
    tape.backward(hm_distill(s, t));
    CHECK(!s.grad().empty());
    for (double g : t.grad()) CHECK(g == 0.0);
  }
}

TEST_CASE("objective sums") {
  const auto one = [](double v) { return C({1}, {v}); };
  SUBCASE("all parts zero give zero") {
    LossParts z{one(0), one(0), one(0), one(0), one(0), one(0)};
    CHECK(total_sdet(z).item() == 0.0);
    CHECK(total_ddet(z).item() == 0.0);
  }
  SUBCASE("parts 1..6 sum to 21 and the detector objective uses hm + reg") {
    LossParts parts{one(1), one(2), one(3), one(4), one(5), one(6)};
    CHECK(total_sdet(parts).item() == 21.0);
    CHECK(total_ddet(parts).item() == 3.0);
  }
  SUBCASE("absent terms are dropped exactly") {
    LossParts parts{one(1), one(2), Tensor{}, one(4), one(5), Tensor{}};
    CHECK(total_sdet(parts).item() == 12.0);
  }
  SUBCASE("multipliers scale their term") {
    LossWeights w;
    w.mask = 0.5;
    w.hm_distill = 0.0;
    LossParts parts{one(1), one(2), one(3), one(4), one(5), one(6)};
    CHECK(total_sdet(parts, w).item() == 13.0);
  }
}

TEST_CASE("loss weights validation") {
  LossWeights w;
  CHECK(w.beta == 10.0);
  CHECK(w.gamma == 20.0);
  CHECK_NOTHROW(validate(w));
  w.gamma = 0.0;
  CHECK_THROWS_AS(validate(w), Error);
  w = {};
  w.distill_peak = 1.0;
  CHECK_THROWS_AS(validate(w), Error);
  w = {};
  w.offset = -1.0;
  CHECK_THROWS_AS(validate(w), Error);
}

TEST_CASE("every loss composed with a small network passes grad_check") {
  ParamStore store;
  Initializer init(3);
  const Conv conv(store, init, "c", {ConvKind::kConv2d, 2, 3, 3, 1, 1, true});
  const auto x = C({2, 2, 3, 3}, oracle::random_vector(36, 110));
  const auto run = [&](const char* name, const std::function<Tensor(const Tensor&)>& loss) {
    CAPTURE(name);
    const auto r = grad_check_params([&](Tape& tape) { return loss(conv(tape, x)); }, store);
    CHECK(r.max_rel_error < 1e-4);
  };
  auto teacher = oracle::random_vector(54, 111);
  for (std::size_t i = 0; i < teacher.size(); i += 3) teacher[i] = 0.0;
  run("feature_mimic", [&](const Tensor& y) { return feature_mimic(y, C(y.shape(), teacher), 10, 20); });
  const auto bits = random_bits(18, 112, 0.3);
  run("l_mask", [&](const Tensor& y) {
    return l_mask(sigmoid(slice(y, 1, 0, 1)), bits);
  });
  const auto centers = oracle::random_vector(27, 113);
  const auto gt = oracle::random_vector(54, 114);
  const auto fg = random_bits(18, 115, 0.6);
  run("l_offset", [&](const Tensor& y) { return l_offset(y, centers, gt, fg); });
  auto hm = oracle::random_vector(54, 116, 0.0, 0.8);
  hm[4] = hm[30] = 1.0;
  run("focal_heatmap", [&](const Tensor& y) { return focal_heatmap(sigmoid(y), hm); });
  const auto reg_t = oracle::random_vector(54, 117);
  run("l_reg", [&](const Tensor& y) { return l_reg(y, reg_t, fg); });
  auto soft = oracle::random_vector(54, 118, 0.0, 1.0);
  run("hm_distill", [&](const Tensor& y) { return hm_distill(sigmoid(y), C(y.shape(), soft)); });
}
