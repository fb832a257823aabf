#include <doctest.h>

#include <cmath>

#include "dcl/nn/losses.hpp"
#include "dcl/rng.hpp"

using namespace dcl;
using namespace dcl::nn;

namespace {

std::vector<double> random_probs(size_t n, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(0.01, 0.99);
  return v;
}

std::vector<double> random_binary(size_t n, uint64_t seed, double p = 0.4) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.bernoulli(p) ? 1.0 : 0.0;
  return v;
}

// central finite differences against the analytic gradient
template <class F>
void gradcheck(F loss, std::vector<double> p, const std::vector<double>& g, double h = 1e-5,
               double tol = 1e-4) {
  std::vector<double> grad(p.size(), 0.0);
  loss(p, &grad);
  for (size_t i = 0; i < p.size(); ++i) {
    const double save = p[i];
    p[i] = save + h;
    const double lp = loss(p, nullptr);
    p[i] = save - h;
    const double lm = loss(p, nullptr);
    p[i] = save;
    const double fd = (lp - lm) / (2 * h);
    const double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-8});
    CHECK(std::abs(fd - grad[i]) / denom < tol);
  }
  (void)g;
}

}  // namespace

TEST_CASE("dice loss: perfect, disjoint, hand value") {
  std::vector<double> y{1, 1, 0, 0, 1, 0, 1, 1};
  CHECK(dice_loss(y, y) == doctest::Approx(0.0).epsilon(1e-5));

  std::vector<double> inv(y.size());
  for (size_t i = 0; i < y.size(); ++i) inv[i] = 1.0 - y[i];
  CHECK(dice_loss(inv, y) == doctest::Approx(1.0).epsilon(1e-5));

  std::vector<double> yh{1, 1, 0, 0};
  std::vector<double> ph{1, 0, 0, 0};
  CHECK(dice_loss(ph, yh, 0.0) == doctest::Approx(1.0 / 3.0));

  CHECK_THROWS_AS(dice_loss(ph, y), std::runtime_error);
}

TEST_CASE("bce loss: closed forms and the clamp") {
  std::vector<double> y{1, 0, 1, 1, 0};
  std::vector<double> half(5, 0.5);
  CHECK(bce_loss(half, y, Reduction::Sum) == doctest::Approx(5.0 * std::log(2.0)));
  CHECK(bce_loss(half, y, Reduction::Mean) == doctest::Approx(std::log(2.0)));

  CHECK(bce_loss(y, y) == doctest::Approx(0.0).epsilon(1e-5));

  std::vector<double> zero{0.0};
  std::vector<double> one{1.0};
  const double clamped = bce_loss(zero, one, Reduction::Sum);
  CHECK(std::isfinite(clamped));
  CHECK(clamped == doctest::Approx(-std::log(1e-7)));
  CHECK(clamped == doctest::Approx(16.118).epsilon(1e-3));
}

TEST_CASE("bce monotonicity: moving a pixel toward its target never increases the loss") {
  Rng rng(17);
  std::vector<double> p = random_probs(32, 1);
  std::vector<double> y = random_binary(32, 2);
  for (int trial = 0; trial < 100; ++trial) {
    const size_t i = rng.uniform_int(p.size());
    std::vector<double> q = p;
    q[i] = y[i] > 0.5 ? std::min(0.999, p[i] + rng.uniform(0, 0.3))
                      : std::max(0.001, p[i] - rng.uniform(0, 0.3));
    CHECK(bce_loss(q, y) <= bce_loss(p, y) + 1e-12);
  }
}

TEST_CASE("loss ranges on random inputs") {
  for (uint64_t s = 0; s < 20; ++s) {
    auto p = random_probs(64, 100 + s);
    auto y = random_binary(64, 200 + s);
    const double d = dice_loss(p, y);
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
    CHECK(bce_loss(p, y) >= 0.0);
  }
}

TEST_CASE("analytic gradients match central differences (f64)") {
  const size_t n = 64;  // one 8x8 map
  auto p = random_probs(n, 7);
  auto y = random_binary(n, 8);

  gradcheck([&](std::vector<double>& q,
                std::vector<double>* g) { return dice_loss(q, y, 1e-6, g); },
            p, y);
  gradcheck([&](std::vector<double>& q,
                std::vector<double>* g) { return bce_loss(q, y, Reduction::Mean, 1e-7, g); },
            p, y);
  gradcheck([&](std::vector<double>& q,
                std::vector<double>* g) { return bce_loss(q, y, Reduction::Sum, 1e-7, g); },
            p, y);

  auto ybar = random_binary(n * 2, 9, 0.6);
  auto g2 = random_binary(n * 2, 10);
  auto p2 = random_probs(n * 2, 11);
  gradcheck(
      [&](std::vector<double>& q, std::vector<double>* g) {
        return coarse_masked_loss_L2(q, ybar, g2, 2, Reduction::Mean, g);
      },
      p2, g2);
}

TEST_CASE("L1 equals dice + bce computed separately") {
  const int classes = 3;
  const size_t plane = 25;
  auto p = random_probs(classes * plane, 31);
  auto g = random_binary(classes * plane, 32);
  LossBreakdown<double> lb = supervised_loss_L1(p, g, classes);
  double dice = 0, bce = 0;
  for (int c = 0; c < classes; ++c) {
    std::vector<double> pc(p.begin() + c * plane, p.begin() + (c + 1) * plane);
    std::vector<double> gc(g.begin() + c * plane, g.begin() + (c + 1) * plane);
    dice += dice_loss(pc, gc) / classes;
    bce += bce_loss(pc, gc) / classes;
  }
  CHECK(std::abs(lb.dice - dice) < 1e-12);
  CHECK(std::abs(lb.bce - bce) < 1e-12);
  CHECK(std::abs(lb.total - (dice + bce)) < 1e-12);
}

TEST_CASE("L2 gating: full mask, zero mask, hand pixel, exact nullity") {
  const size_t n = 16;
  auto p = random_probs(n, 41);
  auto g = random_binary(n, 42);

  std::vector<double> ones(n, 1.0);
  CHECK(coarse_masked_loss_L2(p, ones, g, 1) == doctest::Approx(bce_loss(p, g)));

  std::vector<double> zeros(n, 0.0);
  std::vector<double> grad(n, 0.0);
  const double gated_out = coarse_masked_loss_L2(p, zeros, g, 1, Reduction::Mean, &grad);
  CHECK(gated_out == doctest::Approx(bce_loss(zeros, g)));
  for (double x : grad) CHECK(x == 0.0);

  std::vector<double> p1{0.8}, y1{1.0}, m1{1.0};
  CHECK(coarse_masked_loss_L2(p1, m1, y1, 1) == doctest::Approx(-std::log(0.8)));

  // exact zero gradient at every gated-out position on random masks
  for (uint64_t s = 0; s < 100; ++s) {
    auto pp = random_probs(n, 500 + s);
    auto yy = random_binary(n, 600 + s);
    auto mm = random_binary(n, 700 + s, 0.5);
    std::vector<double> gg(n, 0.0);
    coarse_masked_loss_L2(pp, mm, yy, 1, Reduction::Mean, &gg);
    for (size_t i = 0; i < n; ++i)
      if (mm[i] == 0.0) CHECK(gg[i] == 0.0);
  }
}

TEST_CASE("total loss composition and the single-label configuration") {
  const int classes = 2;
  const size_t n = classes * 36;
  auto p1 = random_probs(n, 51);
  auto p2 = random_probs(n, 52);
  auto g = random_binary(n, 53);
  auto ybar = random_binary(n, 54, 0.6);

  LossBreakdown<double> t = total_loss(p1, p2, g, ybar, classes);
  LossBreakdown<double> l1 = supervised_loss_L1(p1, g, classes);
  const double l2 = coarse_masked_loss_L2(p2, ybar, g, classes);
  CHECK(std::abs(t.total - (l1.dice + l1.bce + l2)) < 1e-12);
  CHECK(std::abs(t.total - (t.dice + t.bce + t.coarse)) < 1e-9);

  std::vector<double> gp2(n, 0.0);
  LossBreakdown<double> single =
      total_loss<double>(p1, p2, g, ybar, classes, Reduction::Mean, nullptr, &gp2, false);
  CHECK(single.coarse == 0.0);
  CHECK(std::abs(single.total - l1.total) < 1e-12);
  for (double x : gp2) CHECK(x == 0.0);
}
