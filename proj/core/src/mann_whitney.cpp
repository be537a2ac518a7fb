#include "mmreg/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mmreg/error.hpp"

namespace mmreg {

namespace {

// Midranks of the pooled sample.
std::vector<double> midranks(const std::vector<double>& pooled) {
  const std::size_t n = pooled.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;  // average of ranks i+1..j+1
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double u_from_rank_sum(double rank_sum_a, std::size_t n_a) {
  return rank_sum_a - 0.5 * static_cast<double>(n_a) * (n_a + 1);
}

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace

MannWhitneyResult mann_whitney_u(std::span<const double> sample_a,
                                 std::span<const double> sample_b, int exact_limit) {
  const std::size_t n_a = sample_a.size();
  const std::size_t n_b = sample_b.size();
  if (n_a == 0 || n_b == 0) throw DataError("mann_whitney_u: empty sample");

  std::vector<double> pooled;
  pooled.reserve(n_a + n_b);
  pooled.insert(pooled.end(), sample_a.begin(), sample_a.end());
  pooled.insert(pooled.end(), sample_b.begin(), sample_b.end());
  const std::vector<double> ranks = midranks(pooled);

  double rank_sum_a = 0.0;
  for (std::size_t i = 0; i < n_a; ++i) rank_sum_a += ranks[i];
  const double u_obs = u_from_rank_sum(rank_sum_a, n_a);

  MannWhitneyResult res;
  res.u = u_obs;

  const std::size_t n = n_a + n_b;
  if (exact_limit > 0 && n <= static_cast<std::size_t>(exact_limit)) {
    // Exact permutation distribution of U over all C(n, n_a) assignments of
    // the observed pooled values to group A (ties handled by the midranks).
    res.exact = true;
    std::vector<bool> pick(n, false);
    std::fill(pick.begin(), pick.begin() + static_cast<long>(n_a), true);
    std::sort(pick.begin(), pick.end());  // lowest lexicographic start
    long total = 0, le = 0, ge = 0;
    const double tol = 1e-9;
    // iterate over all combinations via std::next_permutation on the mask
    do {
      double rs = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (pick[i]) rs += ranks[i];
      }
      const double u = u_from_rank_sum(rs, n_a);
      ++total;
      if (u <= u_obs + tol) ++le;
      if (u >= u_obs - tol) ++ge;
    } while (std::next_permutation(pick.begin(), pick.end()));
    const double p_le = static_cast<double>(le) / total;
    const double p_ge = static_cast<double>(ge) / total;
    res.p = std::min(1.0, 2.0 * std::min(p_le, p_ge));
    return res;
  }

  // Normal approximation with tie correction and continuity correction.
  res.exact = false;
  const double mu = 0.5 * static_cast<double>(n_a) * n_b;
  double tie_term = 0.0;
  {
    std::vector<double> sorted = pooled;
    std::sort(sorted.begin(), sorted.end());
    std::size_t i = 0;
    while (i < sorted.size()) {
      std::size_t j = i;
      while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i + 1);
      tie_term += t * (t * t - 1.0);
      i = j + 1;
    }
  }
  const double nn = static_cast<double>(n);
  const double sigma2 = (static_cast<double>(n_a) * n_b / 12.0) *
                        ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
  if (sigma2 <= 0.0) {
    res.p = 1.0;  // fully tied data carries no ordering information
    return res;
  }
  const double sigma = std::sqrt(sigma2);
  const double diff = u_obs - mu;
  const double cc = diff > 0.0 ? -0.5 : (diff < 0.0 ? 0.5 : 0.0);
  const double z = (diff + cc) / sigma;
  res.p = std::min(1.0, 2.0 * normal_sf(std::abs(z)));
  return res;
}

}  // namespace mmreg
