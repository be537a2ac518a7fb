#include "mmreg/loss.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "mmreg/error.hpp"

namespace mmreg {

namespace {
constexpr double kDiceEps = 1e-6;
}

namespace nn {

template <typename T>
double intensity_loss(const Tensor<T>& fixed, const Tensor<T>& warped) {
  if (fixed.shape() != warped.shape()) throw NumericError("intensity_loss: shape mismatch");
  if (fixed.empty()) throw NumericError("intensity_loss: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < fixed.size(); ++i) {
    const double d = static_cast<double>(fixed[i]) - warped[i];
    acc += d * d;
  }
  return acc / static_cast<double>(fixed.size());
}

template <typename T>
void intensity_loss_backward(const Tensor<T>& fixed, const Tensor<T>& warped, double upstream,
                             Tensor<T>& d_warped) {
  const double scale = 2.0 * upstream / static_cast<double>(fixed.size());
  for (std::size_t i = 0; i < fixed.size(); ++i) {
    d_warped[i] += static_cast<T>(scale * (static_cast<double>(warped[i]) - fixed[i]));
  }
}

template <typename T>
double dice_loss(const Tensor<T>& fixed_mask, const Tensor<T>& warped_mask) {
  if (fixed_mask.shape() != warped_mask.shape()) throw NumericError("dice_loss: shape mismatch");
  double inter = 0.0, sum_f = 0.0, sum_w = 0.0;
  for (std::size_t i = 0; i < fixed_mask.size(); ++i) {
    inter += static_cast<double>(fixed_mask[i]) * warped_mask[i];
    sum_f += fixed_mask[i];
    sum_w += warped_mask[i];
  }
  return 1.0 - (2.0 * inter + kDiceEps) / (sum_f + sum_w + kDiceEps);
}

template <typename T>
void dice_loss_backward(const Tensor<T>& fixed_mask, const Tensor<T>& warped_mask,
                        double upstream, Tensor<T>& d_warped_mask) {
  double inter = 0.0, sum_f = 0.0, sum_w = 0.0;
  for (std::size_t i = 0; i < fixed_mask.size(); ++i) {
    inter += static_cast<double>(fixed_mask[i]) * warped_mask[i];
    sum_f += fixed_mask[i];
    sum_w += warped_mask[i];
  }
  const double denom = sum_f + sum_w + kDiceEps;
  const double num = 2.0 * inter + kDiceEps;
  // d dice / d w_i = -(2 f_i * denom - num) / denom^2
  for (std::size_t i = 0; i < fixed_mask.size(); ++i) {
    const double g = -(2.0 * fixed_mask[i] * denom - num) / (denom * denom);
    d_warped_mask[i] += static_cast<T>(upstream * g);
  }
}

namespace {

template <typename T>
void check_sample_sets(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2) throw NumericError("mmd: sample sets must be [N, d]");
  if (a.dim(0) < 1 || b.dim(0) < 1) throw NumericError("mmd: empty sample set");
  if (a.dim(1) != b.dim(1)) throw NumericError("mmd: sample dimension mismatch");
}

// Median of pairwise squared distances over the pooled samples (i < j).
template <typename T>
double median_sq_distance(const Tensor<T>& a, const Tensor<T>& b) {
  const int d = a.dim(1);
  const int na = a.dim(0), nb = b.dim(0);
  const int n = na + nb;
  auto row = [&](int i) { return i < na ? a.data() + static_cast<std::size_t>(i) * d
                                        : b.data() + static_cast<std::size_t>(i - na) * d; };
  std::vector<double> d2;
  d2.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i) {
    const T* xi = row(i);
    for (int j = i + 1; j < n; ++j) {
      const T* xj = row(j);
      double s = 0.0;
      for (int c = 0; c < d; ++c) {
        const double v = static_cast<double>(xi[c]) - xj[c];
        s += v * v;
      }
      d2.push_back(s);
    }
  }
  if (d2.empty()) return 1.0;
  std::nth_element(d2.begin(), d2.begin() + d2.size() / 2, d2.end());
  return d2[d2.size() / 2];
}

// Unbiased RBF MMD^2 before clamping; bandwidth passed in.
template <typename T>
double mmd_rbf_raw(const Tensor<T>& a, const Tensor<T>& b, double h) {
  const int d = a.dim(1);
  const int m = a.dim(0), n = b.dim(0);
  auto kern = [&](const T* x, const T* y) {
    double s = 0.0;
    for (int c = 0; c < d; ++c) {
      const double v = static_cast<double>(x[c]) - y[c];
      s += v * v;
    }
    return std::exp(-s / h);
  };
  double term_a = 0.0, term_b = 0.0, term_c = 0.0;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      if (i != j) term_a += kern(a.data() + static_cast<std::size_t>(i) * d,
                                 a.data() + static_cast<std::size_t>(j) * d);
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i != j) term_b += kern(b.data() + static_cast<std::size_t>(i) * d,
                                 b.data() + static_cast<std::size_t>(j) * d);
    }
  }
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      term_c += kern(a.data() + static_cast<std::size_t>(i) * d,
                     b.data() + static_cast<std::size_t>(j) * d);
    }
  }
  double out = 0.0;
  if (m > 1) out += term_a / (static_cast<double>(m) * (m - 1));
  if (n > 1) out += term_b / (static_cast<double>(n) * (n - 1));
  out -= 2.0 * term_c / (static_cast<double>(m) * n);
  return out;
}

}  // namespace

template <typename T>
double mmd_loss(const Tensor<T>& a, const Tensor<T>& b) {
  check_sample_sets(a, b);
  const int d = a.dim(1);
  double acc = 0.0;
  for (int c = 0; c < d; ++c) {
    double ma = 0.0, mb = 0.0;
    for (int i = 0; i < a.dim(0); ++i) ma += a(i, c);
    for (int i = 0; i < b.dim(0); ++i) mb += b(i, c);
    const double diff = ma / a.dim(0) - mb / b.dim(0);
    acc += diff * diff;
  }
  return acc;
}

template <typename T>
void mmd_loss_backward(const Tensor<T>& a, const Tensor<T>& b, double upstream, Tensor<T>& da,
                       Tensor<T>& db) {
  check_sample_sets(a, b);
  const int d = a.dim(1);
  const int na = a.dim(0), nb = b.dim(0);
  for (int c = 0; c < d; ++c) {
    double ma = 0.0, mb = 0.0;
    for (int i = 0; i < na; ++i) ma += a(i, c);
    for (int i = 0; i < nb; ++i) mb += b(i, c);
    const double diff = ma / na - mb / nb;
    const T ga = static_cast<T>(upstream * 2.0 * diff / na);
    const T gb = static_cast<T>(-upstream * 2.0 * diff / nb);
    for (int i = 0; i < na; ++i) da(i, c) += ga;
    for (int i = 0; i < nb; ++i) db(i, c) += gb;
  }
}

template <typename T>
double mmd_loss_rbf(const Tensor<T>& a, const Tensor<T>& b) {
  check_sample_sets(a, b);
  if (a.dim(0) < 2 || b.dim(0) < 2) {
    throw NumericError("mmd_loss_rbf: unbiased estimator needs >= 2 samples per set");
  }
  const double h = std::max(median_sq_distance(a, b), 1e-12);
  return std::max(0.0, mmd_rbf_raw(a, b, h));
}

template <typename T>
void mmd_loss_rbf_backward(const Tensor<T>& a, const Tensor<T>& b, double upstream, Tensor<T>& da,
                           Tensor<T>& db) {
  check_sample_sets(a, b);
  const int d = a.dim(1);
  const int m = a.dim(0), n = b.dim(0);
  const double h = std::max(median_sq_distance(a, b), 1e-12);
  if (mmd_rbf_raw(a, b, h) <= 0.0) return;  // clamped region, zero gradient

  auto kern = [&](const T* x, const T* y) {
    double s = 0.0;
    for (int c = 0; c < d; ++c) {
      const double v = static_cast<double>(x[c]) - y[c];
      s += v * v;
    }
    return std::exp(-s / h);
  };
  const double ca = m > 1 ? 1.0 / (static_cast<double>(m) * (m - 1)) : 0.0;
  const double cb = n > 1 ? 1.0 / (static_cast<double>(n) * (n - 1)) : 0.0;
  const double cc = 2.0 / (static_cast<double>(m) * n);
  for (int i = 0; i < m; ++i) {
    const T* xi = a.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < m; ++j) {
      if (i == j) continue;
      const T* xj = a.data() + static_cast<std::size_t>(j) * d;
      const double w = upstream * ca * kern(xi, xj) * (-2.0 / h);
      // both ordered pairs (i,j),(j,i) enumerate; each contributes to x_i
      for (int c = 0; c < d; ++c) {
        da(i, c) += static_cast<T>(2.0 * w * (static_cast<double>(xi[c]) - xj[c]));
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    const T* yi = b.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const T* yj = b.data() + static_cast<std::size_t>(j) * d;
      const double w = upstream * cb * kern(yi, yj) * (-2.0 / h);
      for (int c = 0; c < d; ++c) {
        db(i, c) += static_cast<T>(2.0 * w * (static_cast<double>(yi[c]) - yj[c]));
      }
    }
  }
  for (int i = 0; i < m; ++i) {
    const T* xi = a.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < n; ++j) {
      const T* yj = b.data() + static_cast<std::size_t>(j) * d;
      const double w = -upstream * cc * kern(xi, yj) * (-2.0 / h);
      for (int c = 0; c < d; ++c) {
        const double diff = static_cast<double>(xi[c]) - yj[c];
        da(i, c) += static_cast<T>(w * diff);
        db(j, c) += static_cast<T>(-w * diff);
      }
    }
  }
}

template <typename T>
Tensor<T> feature_fibers(const Tensor<T>& features) {
  const int n = features.dim(0), d = features.dim(1), h = features.dim(2), w = features.dim(3);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor<T> out({n * h * w, d});
  for (int i = 0; i < n; ++i) {
    const T* fp = features.data() + static_cast<std::size_t>(i) * d * hw;
    for (std::size_t s = 0; s < hw; ++s) {
      T* op = out.data() + (static_cast<std::size_t>(i) * hw + s) * d;
      for (int c = 0; c < d; ++c) op[c] = fp[c * hw + s];
    }
  }
  return out;
}

template <typename T>
void feature_fibers_backward(const Tensor<T>& d_samples, Tensor<T>& d_features) {
  const int n = d_features.dim(0), d = d_features.dim(1), h = d_features.dim(2),
            w = d_features.dim(3);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    T* fp = d_features.data() + static_cast<std::size_t>(i) * d * hw;
    for (std::size_t s = 0; s < hw; ++s) {
      const T* sp = d_samples.data() + (static_cast<std::size_t>(i) * hw + s) * d;
      for (int c = 0; c < d; ++c) fp[c * hw + s] += sp[c];
    }
  }
}

template <typename T>
Tensor<T> feature_pooled(const Tensor<T>& features) {
  const int n = features.dim(0), d = features.dim(1), h = features.dim(2), w = features.dim(3);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor<T> out({n, d});
  for (int i = 0; i < n; ++i) {
    const T* fp = features.data() + static_cast<std::size_t>(i) * d * hw;
    for (int c = 0; c < d; ++c) {
      double acc = 0.0;
      for (std::size_t s = 0; s < hw; ++s) acc += fp[c * hw + s];
      out(i, c) = static_cast<T>(acc / static_cast<double>(hw));
    }
  }
  return out;
}

template <typename T>
void feature_pooled_backward(const Tensor<T>& d_samples, Tensor<T>& d_features) {
  const int n = d_features.dim(0), d = d_features.dim(1), h = d_features.dim(2),
            w = d_features.dim(3);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    T* fp = d_features.data() + static_cast<std::size_t>(i) * d * hw;
    for (int c = 0; c < d; ++c) {
      const T g = static_cast<T>(d_samples(i, c) / static_cast<double>(hw));
      for (std::size_t s = 0; s < hw; ++s) fp[c * hw + s] += g;
    }
  }
}

template <typename T>
LossBreakdown total_loss(const Tensor<T>& fixed, const Tensor<T>& warped,
                         const Tensor<T>& fixed_mask, const Tensor<T>& warped_mask,
                         const Tensor<T>& moving_samples, const Tensor<T>& fixed_samples,
                         double lambda_reg, MmdKernel kernel) {
  LossBreakdown out;
  out.intensity = intensity_loss(fixed, warped);
  out.dice = dice_loss(fixed_mask, warped_mask);
  out.mmd = kernel == MmdKernel::linear ? mmd_loss(moving_samples, fixed_samples)
                                        : mmd_loss_rbf(moving_samples, fixed_samples);
  out.lambda_reg = lambda_reg;
  out.total = out.intensity + out.dice + lambda_reg * out.mmd;
  return out;
}

#define MMREG_INSTANTIATE_LOSS(T)                                                               \
  template double intensity_loss(const Tensor<T>&, const Tensor<T>&);                           \
  template void intensity_loss_backward(const Tensor<T>&, const Tensor<T>&, double, Tensor<T>&); \
  template double dice_loss(const Tensor<T>&, const Tensor<T>&);                                \
  template void dice_loss_backward(const Tensor<T>&, const Tensor<T>&, double, Tensor<T>&);     \
  template double mmd_loss(const Tensor<T>&, const Tensor<T>&);                                 \
  template void mmd_loss_backward(const Tensor<T>&, const Tensor<T>&, double, Tensor<T>&,       \
                                  Tensor<T>&);                                                  \
  template double mmd_loss_rbf(const Tensor<T>&, const Tensor<T>&);                             \
  template void mmd_loss_rbf_backward(const Tensor<T>&, const Tensor<T>&, double, Tensor<T>&,   \
                                      Tensor<T>&);                                              \
  template Tensor<T> feature_fibers(const Tensor<T>&);                                          \
  template void feature_fibers_backward(const Tensor<T>&, Tensor<T>&);                          \
  template Tensor<T> feature_pooled(const Tensor<T>&);                                          \
  template void feature_pooled_backward(const Tensor<T>&, Tensor<T>&);                          \
  template LossBreakdown total_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                    const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                    double, MmdKernel);

MMREG_INSTANTIATE_LOSS(float)
MMREG_INSTANTIATE_LOSS(double)
#undef MMREG_INSTANTIATE_LOSS

}  // namespace nn

double intensity_loss(const GridImage& fixed, const GridImage& warped) {
  if (fixed.height != warped.height || fixed.width != warped.width ||
      fixed.channels != warped.channels) {
    throw NumericError("intensity_loss: image shape mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < fixed.size(); ++i) {
    const double d = static_cast<double>(fixed.pixels[i]) - warped.pixels[i];
    acc += d * d;
  }
  return acc / static_cast<double>(fixed.size());
}

double dice_loss(const BinaryMask& fixed_mask, const GridImage& warped_soft_mask) {
  if (fixed_mask.height != warped_soft_mask.height || fixed_mask.width != warped_soft_mask.width ||
      warped_soft_mask.channels != 1) {
    throw NumericError("dice_loss: mask shape mismatch");
  }
  double inter = 0.0, sum_f = 0.0, sum_w = 0.0;
  for (std::size_t i = 0; i < fixed_mask.pixels.size(); ++i) {
    inter += static_cast<double>(fixed_mask.pixels[i]) * warped_soft_mask.pixels[i];
    sum_f += fixed_mask.pixels[i];
    sum_w += warped_soft_mask.pixels[i];
  }
  return 1.0 - (2.0 * inter + kDiceEps) / (sum_f + sum_w + kDiceEps);
}

double dice_loss(const BinaryMask& fixed_mask, const BinaryMask& warped_mask) {
  if (fixed_mask.height != warped_mask.height || fixed_mask.width != warped_mask.width) {
    throw NumericError("dice_loss: mask shape mismatch");
  }
  double inter = 0.0, sum_f = 0.0, sum_w = 0.0;
  for (std::size_t i = 0; i < fixed_mask.pixels.size(); ++i) {
    inter += static_cast<double>(fixed_mask.pixels[i]) * warped_mask.pixels[i];
    sum_f += fixed_mask.pixels[i];
    sum_w += warped_mask.pixels[i];
  }
  return 1.0 - (2.0 * inter + kDiceEps) / (sum_f + sum_w + kDiceEps);
}

}  // namespace mmreg
