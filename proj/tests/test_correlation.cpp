#include <doctest.h>

#include <chrono>
#include <cmath>
#include <set>

#include "mmreg/correlation.hpp"
#include "mmreg/layers.hpp"
#include "support/oracles.hpp"

using namespace mmreg;
using nn::CorrelationMode;
using nn::Tensor;

namespace {

// Brute-force double-loop Pearson correlation volume (the oracle route).
Tensor<double> correlate_bruteforce(const Tensor<double>& fm, const Tensor<double>& ff) {
  const int n = fm.dim(0), d = fm.dim(1), h = fm.dim(2), w = fm.dim(3);
  Tensor<double> out({n, h * w, h, w});
  for (int i = 0; i < n; ++i) {
    for (int mi = 0; mi < h; ++mi) {
      for (int mj = 0; mj < w; ++mj) {
        for (int p = 0; p < h; ++p) {
          for (int q = 0; q < w; ++q) {
            std::vector<double> u(d), v(d);
            for (int c = 0; c < d; ++c) {
              u[c] = fm(i, c, mi, mj);
              v[c] = ff(i, c, p, q);
            }
            out(i, nn::corr_pack_index(p, q, h), mi, mj) = oracles::pearson(u, v);
          }
        }
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("correlate matches the brute-force Pearson oracle on 100 random 4x4x8 pairs") {
  Rng rng(61);
  const auto t0 = std::chrono::steady_clock::now();
  double max_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor<double> fm = oracles::random_tensor<double>({1, 8, 4, 4}, rng);
    const Tensor<double> ff = oracles::random_tensor<double>({1, 8, 4, 4}, rng);
    const Tensor<double> got = nn::correlate(fm, ff, CorrelationMode::pearson);
    const Tensor<double> want = correlate_bruteforce(fm, ff);
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) {
      max_err = std::max(max_err, std::abs(got[i] - want[i]));
    }
  }
  CHECK(max_err < 1e-5);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 10.0);
}

TEST_CASE("raw correlation entries live in [-1, 1] and self-correlation is 1") {
  Rng rng(62);
  Tensor<double> f = oracles::random_tensor<double>({1, 8, 3, 3}, rng);
  const Tensor<double> c = nn::correlate(f, f, CorrelationMode::pearson);
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(c[i] >= -1.0 - 1e-5);
    CHECK(c[i] <= 1.0 + 1e-5);
  }
  // k encoding (p, q) = (i, j) compares a fiber with itself
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      CHECK(c(0, nn::corr_pack_index(i, j, 3), i, j) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("handmade fibers: anticorrelation and the [1,2,3] vs [1,2,4] case") {
  // single-location maps with d=3 fibers
  Tensor<double> a({1, 3, 1, 1});
  Tensor<double> b({1, 3, 1, 1});
  auto set_fiber = [](Tensor<double>& t, double x, double y, double z) {
    t(0, 0, 0, 0) = x;
    t(0, 1, 0, 0) = y;
    t(0, 2, 0, 0) = z;
  };
  set_fiber(a, 1, 2, 3);
  set_fiber(b, 3, 2, 1);
  CHECK(nn::correlate(a, b, CorrelationMode::pearson)[0] == doctest::Approx(-1.0).epsilon(1e-6));

  set_fiber(b, 1, 2, 4);
  const double got = nn::correlate(a, b, CorrelationMode::pearson)[0];
  CHECK(got == doctest::Approx(oracles::pearson({1, 2, 3}, {1, 2, 4})).epsilon(1e-9));
  CHECK(got == doctest::Approx(0.982).epsilon(1e-3));

  // constant fiber correlates to zero
  set_fiber(b, 5, 5, 5);
  CHECK(nn::correlate(a, b, CorrelationMode::pearson)[0] == 0.0);
}

TEST_CASE("index packing matches the 0-based k = p + H*q convention") {
  CHECK(nn::corr_pack_index(3, 1, 14) == 17);
  const auto [p, q] = nn::corr_unpack_index(17, 14);
  CHECK(p == 3);
  CHECK(q == 1);

  // bijectivity, exhaustively for H = W = 14
  std::set<int> seen;
  for (int pp = 0; pp < 14; ++pp) {
    for (int qq = 0; qq < 14; ++qq) {
      const int k = nn::corr_pack_index(pp, qq, 14);
      CHECK(k >= 0);
      CHECK(k < 196);
      CHECK(seen.insert(k).second);
      const auto [rp, rq] = nn::corr_unpack_index(k, 14);
      CHECK(rp == pp);
      CHECK(rq == qq);
    }
  }
  CHECK(seen.size() == 196);
}

TEST_CASE("swapping the feature maps transposes the correlation volume") {
  Rng rng(63);
  const Tensor<double> fm = oracles::random_tensor<double>({2, 6, 4, 4}, rng);
  const Tensor<double> ff = oracles::random_tensor<double>({2, 6, 4, 4}, rng);
  const Tensor<double> c = nn::correlate(fm, ff, CorrelationMode::pearson);
  const Tensor<double> ct = nn::correlate(ff, fm, CorrelationMode::pearson);
  for (int n = 0; n < 2; ++n) {
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        for (int p = 0; p < 4; ++p) {
          for (int q = 0; q < 4; ++q) {
            const double lhs = ct(n, nn::corr_pack_index(i, j, 4), p, q);
            const double rhs = c(n, nn::corr_pack_index(p, q, 4), i, j);
            CHECK(std::abs(lhs - rhs) < 1e-6);
          }
        }
      }
    }
  }
}

TEST_CASE("normalize_correlation: ReLU then unit fibers") {
  // all-negative fiber -> zero fiber
  Tensor<double> c({1, 3, 1, 1});
  c(0, 0, 0, 0) = -0.5;
  c(0, 1, 0, 0) = -0.1;
  c(0, 2, 0, 0) = -0.9;
  Tensor<double> z = nn::normalize_correlation(c);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(z[i] == 0.0);

  // single positive entry becomes exactly 1
  c(0, 1, 0, 0) = 0.37;
  z = nn::normalize_correlation(c);
  CHECK(z(0, 1, 0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(z(0, 0, 0, 0) == 0.0);

  // [0.6, 0.8, -0.5] -> [0.6, 0.8, 0] (norm is exactly 1)
  c(0, 0, 0, 0) = 0.6;
  c(0, 1, 0, 0) = 0.8;
  c(0, 2, 0, 0) = -0.5;
  z = nn::normalize_correlation(c);
  CHECK(z(0, 0, 0, 0) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(z(0, 1, 0, 0) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(z(0, 2, 0, 0) == 0.0);

  // normalized fibers are nonnegative with norm in {0, 1}
  Rng rng(64);
  const Tensor<double> raw = nn::correlate(oracles::random_tensor<double>({1, 8, 4, 4}, rng),
                                           oracles::random_tensor<double>({1, 8, 4, 4}, rng),
                                           CorrelationMode::pearson);
  const Tensor<double> nz = nn::normalize_correlation(raw);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      double ss = 0.0;
      for (int k = 0; k < 16; ++k) {
        CHECK(nz(0, k, i, j) >= 0.0);
        ss += nz(0, k, i, j) * nz(0, k, i, j);
      }
      const double norm = std::sqrt(ss);
      CHECK((norm < 1e-5 || std::abs(norm - 1.0) < 1e-5));
    }
  }
}

TEST_CASE("correlate gradients match central finite differences") {
  Rng rng(65);
  Tensor<double> fm = oracles::random_tensor<double>({1, 5, 3, 3}, rng);
  Tensor<double> ff = oracles::random_tensor<double>({1, 5, 3, 3}, rng);
  const Tensor<double> w = oracles::random_tensor<double>({1 * 9 * 3 * 3}, rng);

  for (CorrelationMode mode : {CorrelationMode::pearson, CorrelationMode::cosine}) {
    auto loss_from = [&](const Tensor<double>& m, const Tensor<double>& f) {
      const Tensor<double> c = nn::correlate(m, f, mode);
      double acc = 0.0;
      for (std::size_t i = 0; i < c.size(); ++i) acc += w[i] * c[i];
      return acc;
    };
    nn::CorrelationCache<double> cache;
    const Tensor<double> c = nn::correlate(fm, ff, mode, &cache);
    Tensor<double> dy(c.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dy[i] = w[i];
    Tensor<double> dfm(fm.shape()), dff(ff.shape());
    nn::correlate_backward(cache, dy, dfm, dff);

    Tensor<double> fd_m = oracles::fd_gradient(fm, [&](const Tensor<double>& m) {
      return loss_from(m, ff);
    });
    Tensor<double> fd_f = oracles::fd_gradient(ff, [&](const Tensor<double>& f) {
      return loss_from(fm, f);
    });
    double worst = 0.0;
    CHECK_MESSAGE(oracles::grads_close(dfm, fd_m, 1e-3, 1e-7, &worst),
                  "moving grad worst rel = " << worst);
    CHECK_MESSAGE(oracles::grads_close(dff, fd_f, 1e-3, 1e-7, &worst),
                  "fixed grad worst rel = " << worst);
  }
}

TEST_CASE("normalize_correlation gradient matches finite differences") {
  Rng rng(66);
  // keep entries away from the ReLU kink for clean finite differences
  Tensor<double> raw = oracles::random_tensor<double>({1, 6, 2, 2}, rng, 0.05, 1.0);
  for (std::size_t i = 0; i < raw.size(); i += 3) raw[i] = -raw[i];  // some solidly negative
  const Tensor<double> w = oracles::random_tensor<double>({1 * 6 * 2 * 2}, rng);

  auto loss_of = [&](const Tensor<double>& x) {
    const Tensor<double> z = nn::normalize_correlation(x);
    double acc = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) acc += w[i] * z[i];
    return acc;
  };
  const Tensor<double> z = nn::normalize_correlation(raw);
  Tensor<double> dy(z.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dy[i] = w[i];
  const Tensor<double> dx = nn::normalize_correlation_backward(raw, dy);
  Tensor<double> fd = oracles::fd_gradient(raw, loss_of);
  double worst = 0.0;
  CHECK_MESSAGE(oracles::grads_close(dx, fd, 1e-3, 1e-7, &worst), "worst rel = " << worst);
}

TEST_CASE("cosine mode skips centering") {
  Tensor<double> a({1, 2, 1, 1});
  Tensor<double> b({1, 2, 1, 1});
  a(0, 0, 0, 0) = 1.0;
  a(0, 1, 0, 0) = 1.0;
  b(0, 0, 0, 0) = 1.0;
  b(0, 1, 0, 0) = 1.0;
  // constant fibers: Pearson sees zero variance, cosine sees parallel vectors
  CHECK(nn::correlate(a, b, CorrelationMode::pearson)[0] == 0.0);
  CHECK(nn::correlate(a, b, CorrelationMode::cosine)[0] == doctest::Approx(1.0).epsilon(1e-12));
}
