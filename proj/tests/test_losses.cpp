#include <doctest.h>

#include <cmath>

#include "mmreg/loss.hpp"
#include "support/oracles.hpp"

using namespace mmreg;
using nn::Tensor;

TEST_CASE("intensity loss: examples and symmetry") {
  Tensor<double> a({1, 1, 1, 2}), b({1, 1, 1, 2});
  a[0] = 0.0;
  a[1] = 0.5;
  b[0] = 0.5;
  b[1] = 1.0;
  CHECK(nn::intensity_loss(a, b) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(nn::intensity_loss(b, a) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(nn::intensity_loss(a, a) == 0.0);

  Tensor<double> zero({1, 1, 2, 2}), one({1, 1, 2, 2});
  one.fill(1.0);
  CHECK(nn::intensity_loss(zero, one) == doctest::Approx(1.0).epsilon(1e-12));

  GridImage ia(1, 2, 1), ib(1, 2, 1);
  ia.at(0, 0, 0) = 0.0f;
  ia.at(0, 1, 0) = 0.5f;
  ib.at(0, 0, 0) = 0.5f;
  ib.at(0, 1, 0) = 1.0f;
  CHECK(intensity_loss(ia, ib) == doctest::Approx(0.25).epsilon(1e-6));
}

TEST_CASE("dice loss: identical, disjoint and half-overlap masks") {
  Tensor<double> f({1, 1, 20, 20}), w({1, 1, 20, 20});
  // identical non-empty
  for (int i = 0; i < 60; ++i) {
    f[i] = 1.0;
    w[i] = 1.0;
  }
  CHECK(nn::dice_loss(f, w) == doctest::Approx(0.0).epsilon(1e-6));

  // disjoint non-empty
  w.set_zero();
  for (int i = 100; i < 160; ++i) w[i] = 1.0;
  CHECK(nn::dice_loss(f, w) == doctest::Approx(1.0).epsilon(1e-6));

  // 100 px each, 50 px overlap -> dice loss 0.5
  f.set_zero();
  w.set_zero();
  for (int i = 0; i < 100; ++i) f[i] = 1.0;
  for (int i = 50; i < 150; ++i) w[i] = 1.0;
  CHECK(nn::dice_loss(f, w) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(nn::dice_loss(w, f) == doctest::Approx(0.5).epsilon(1e-6));

  // empty masks stay finite
  Tensor<double> e1({1, 1, 4, 4}), e2({1, 1, 4, 4});
  CHECK(std::isfinite(nn::dice_loss(e1, e2)));

  // image-level form with a soft warped mask
  BinaryMask bm(10, 10);
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 10; ++x) bm.at(y, x) = 1;
  }
  GridImage soft(10, 10, 1);
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 10; ++x) soft.at(y, x, 0) = 1.0f;
  }
  CHECK(dice_loss(bm, soft) == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("dice in [0,1] and gradient matches finite differences") {
  Rng rng(81);
  Tensor<double> f = oracles::random_tensor<double>({1, 1, 4, 4}, rng, 0.0, 1.0);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = f[i] > 0.5 ? 1.0 : 0.0;
  Tensor<double> w = oracles::random_tensor<double>({1, 1, 4, 4}, rng, 0.05, 0.95);
  const double d = nn::dice_loss(f, w);
  CHECK(d >= 0.0);
  CHECK(d <= 1.0 + 1e-6);

  auto loss_of = [&](const Tensor<double>& x) { return nn::dice_loss(f, x); };
  Tensor<double> grad(w.shape());
  nn::dice_loss_backward(f, w, 1.0, grad);
  Tensor<double> fd = oracles::fd_gradient(w, loss_of);
  double worst = 0.0;
  CHECK_MESSAGE(oracles::grads_close(grad, fd, 1e-3, 1e-8, &worst), "worst rel = " << worst);
}

TEST_CASE("intensity gradient matches finite differences") {
  Rng rng(82);
  Tensor<double> f = oracles::random_tensor<double>({1, 1, 4, 4}, rng, 0.0, 1.0);
  Tensor<double> w = oracles::random_tensor<double>({1, 1, 4, 4}, rng, 0.0, 1.0);
  auto loss_of = [&](const Tensor<double>& x) { return nn::intensity_loss(f, x); };
  Tensor<double> grad(w.shape());
  nn::intensity_loss_backward(f, w, 1.0, grad);
  Tensor<double> fd = oracles::fd_gradient(w, loss_of);
  CHECK(oracles::grads_close(grad, fd, 1e-3));
}

TEST_CASE("linear MMD: examples, properties and the brute-force oracle") {
  // identical sets -> 0
  Rng rng(83);
  Tensor<double> a = oracles::random_tensor<double>({5, 3}, rng);
  CHECK(nn::mmd_loss(a, a) == doctest::Approx(0.0).epsilon(1e-15));

  // set means (1,1) vs (0,0) -> squared distance 2
  Tensor<double> m1({2, 2}), m0({2, 2});
  m1(0, 0) = 2.0;
  m1(0, 1) = 0.0;
  m1(1, 0) = 0.0;
  m1(1, 1) = 2.0;  // mean (1, 1)
  CHECK(nn::mmd_loss(m1, m0) == doctest::Approx(2.0).epsilon(1e-12));

  // brute-force agreement on random 64-sample sets
  Tensor<double> x = oracles::random_tensor<double>({64, 7}, rng);
  Tensor<double> y = oracles::random_tensor<double>({64, 7}, rng, 0.2, 1.3);
  CHECK(std::abs(nn::mmd_loss(x, y) - oracles::mmd_linear_bruteforce(x, y)) < 1e-8);

  // symmetry, non-negativity, permutation invariance
  CHECK(nn::mmd_loss(x, y) == doctest::Approx(nn::mmd_loss(y, x)).epsilon(1e-12));
  CHECK(nn::mmd_loss(x, y) >= 0.0);
  Tensor<double> xp = x;
  for (int i = 0; i < 32; ++i) {
    for (int c = 0; c < 7; ++c) std::swap(xp(i, c), xp(63 - i, c));
  }
  CHECK(nn::mmd_loss(xp, y) == doctest::Approx(nn::mmd_loss(x, y)).epsilon(1e-12));
}

TEST_CASE("RBF MMD: oracle agreement, clamped non-negativity, zero on identical sets") {
  Rng rng(84);
  Tensor<double> a = oracles::random_tensor<double>({10, 4}, rng);
  Tensor<double> b = oracles::random_tensor<double>({12, 4}, rng, 0.5, 1.8);
  CHECK(std::abs(nn::mmd_loss_rbf(a, b) - oracles::mmd_rbf_bruteforce(a, b)) < 1e-6);
  CHECK(nn::mmd_loss_rbf(a, b) >= 0.0);
  CHECK(nn::mmd_loss_rbf(a, a) == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(nn::mmd_loss_rbf(a, b) == doctest::Approx(nn::mmd_loss_rbf(b, a)).epsilon(1e-10));
}

TEST_CASE("MMD gradients match finite differences (both kernels)") {
  Rng rng(85);
  // well-separated sets keep the RBF estimator off its clamp
  Tensor<double> a = oracles::random_tensor<double>({6, 3}, rng, -1.0, -0.2);
  Tensor<double> b = oracles::random_tensor<double>({7, 3}, rng, 0.2, 1.0);

  SUBCASE("linear") {
    auto loss_a = [&](const Tensor<double>& x) { return nn::mmd_loss(x, b); };
    auto loss_b = [&](const Tensor<double>& x) { return nn::mmd_loss(a, x); };
    Tensor<double> da(a.shape()), db(b.shape());
    nn::mmd_loss_backward(a, b, 1.0, da, db);
    CHECK(oracles::grads_close(da, oracles::fd_gradient(a, loss_a), 1e-3));
    CHECK(oracles::grads_close(db, oracles::fd_gradient(b, loss_b), 1e-3));
  }

  SUBCASE("rbf") {
    REQUIRE(nn::mmd_loss_rbf(a, b) > 0.0);
    auto loss_a = [&](const Tensor<double>& x) { return nn::mmd_loss_rbf(x, b); };
    auto loss_b = [&](const Tensor<double>& x) { return nn::mmd_loss_rbf(a, x); };
    Tensor<double> da(a.shape()), db(b.shape());
    nn::mmd_loss_rbf_backward(a, b, 1.0, da, db);
    double worst = 0.0;
    // the bandwidth is treated as a constant in the analytic path; keep the
    // fd step small so the median shift stays second-order
    CHECK_MESSAGE(oracles::grads_close(da, oracles::fd_gradient(a, loss_a, 1e-5), 2e-3, 1e-6,
                                       &worst),
                  "da worst rel = " << worst);
    CHECK_MESSAGE(oracles::grads_close(db, oracles::fd_gradient(b, loss_b, 1e-5), 2e-3, 1e-6,
                                       &worst),
                  "db worst rel = " << worst);
  }
}

TEST_CASE("feature fibers and pooled sampling round-trip their gradients") {
  Rng rng(86);
  Tensor<double> f = oracles::random_tensor<double>({2, 5, 3, 3}, rng);

  const Tensor<double> fib = nn::feature_fibers(f);
  REQUIRE(fib.shape() == std::vector<int>{18, 5});
  CHECK(fib(4, 2) == f(0, 2, 1, 1));  // sample 4 = location (1,1) of image 0

  const Tensor<double> pooled = nn::feature_pooled(f);
  REQUIRE(pooled.shape() == std::vector<int>{2, 5});
  double mean = 0.0;
  for (int h = 0; h < 3; ++h) {
    for (int w = 0; w < 3; ++w) mean += f(1, 3, h, w);
  }
  CHECK(pooled(1, 3) == doctest::Approx(mean / 9.0).epsilon(1e-12));

  // gradient scatter matches finite differences through a weighted sum
  const Tensor<double> w = oracles::random_tensor<double>({18 * 5}, rng);
  auto loss_of = [&](const Tensor<double>& x) {
    const Tensor<double> s = nn::feature_fibers(x);
    double acc = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) acc += w[i] * s[i];
    return acc;
  };
  Tensor<double> ds(fib.shape());
  for (std::size_t i = 0; i < ds.size(); ++i) ds[i] = w[i];
  Tensor<double> df(f.shape());
  nn::feature_fibers_backward(ds, df);
  CHECK(oracles::grads_close(df, oracles::fd_gradient(f, loss_of), 1e-6));
}

TEST_CASE("total_loss breakdown invariant and lambda behavior") {
  Rng rng(87);
  Tensor<double> fixed = oracles::random_tensor<double>({2, 1, 6, 6}, rng, 0.0, 1.0);
  Tensor<double> warped = oracles::random_tensor<double>({2, 1, 6, 6}, rng, 0.0, 1.0);
  Tensor<double> mf = oracles::random_tensor<double>({2, 1, 6, 6}, rng, 0.0, 1.0);
  Tensor<double> mw = oracles::random_tensor<double>({2, 1, 6, 6}, rng, 0.0, 1.0);
  Tensor<double> sm = oracles::random_tensor<double>({8, 4}, rng);
  Tensor<double> sf = oracles::random_tensor<double>({8, 4}, rng);

  const LossBreakdown lb = nn::total_loss(fixed, warped, mf, mw, sm, sf, 0.01);
  CHECK(std::abs(lb.total - (lb.intensity + lb.dice + lb.lambda_reg * lb.mmd)) < 1e-9);
  CHECK(lb.lambda_reg == 0.01);
  CHECK(lb.intensity >= 0.0);
  CHECK(lb.dice >= 0.0);
  CHECK(lb.mmd >= 0.0);

  // lambda = 0: the regularizer is measured but excluded from the total
  const LossBreakdown lb0 = nn::total_loss(fixed, warped, mf, mw, sm, sf, 0.0);
  CHECK(lb0.total == doctest::Approx(lb0.intensity + lb0.dice).epsilon(1e-15));
  CHECK(lb0.mmd > 0.0);

  // perfect alignment and identical feature sets -> total ~ 0
  const LossBreakdown perfect = nn::total_loss(fixed, fixed, mf, mf, sm, sm, 0.01);
  CHECK(perfect.total < 1e-5);

  // monotone in each component: larger mmd with same lambda raises the total
  const LossBreakdown more = nn::total_loss(fixed, warped, mf, mw, sm, sf, 0.02);
  CHECK(more.total >= lb.total);
}
