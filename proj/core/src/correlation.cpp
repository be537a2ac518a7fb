#include "mmreg/correlation.hpp"

#include <Eigen/Core>

#include <cmath>

#include "mmreg/error.hpp"
#include "mmreg/layers.hpp"

namespace mmreg::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Standardizes every fiber of f [N, d, H, W] into z [N, HW, d]:
// optionally center along the channel axis, then divide by
// max(||fiber||, kNormEps). With centering, z_u . z_v is exactly the
// population Pearson coefficient; without it, the cosine similarity.
template <typename T>
void standardize_fibers(const Tensor<T>& f, CorrelationMode mode, Tensor<T>& z,
                        std::vector<T>& norms) {
  const int n = f.dim(0), d = f.dim(1), h = f.dim(2), w = f.dim(3);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  z = Tensor<T>({n, static_cast<int>(hw), d});
  norms.assign(static_cast<std::size_t>(n) * hw, T(0));
  for (int i = 0; i < n; ++i) {
    const T* fp = f.data() + static_cast<std::size_t>(i) * d * hw;
    for (std::size_t s = 0; s < hw; ++s) {
      double mean = 0.0;
      if (mode == CorrelationMode::pearson) {
        for (int c = 0; c < d; ++c) mean += fp[c * hw + s];
        mean /= d;
      }
      double ss = 0.0;
      for (int c = 0; c < d; ++c) {
        const double v = fp[c * hw + s] - mean;
        ss += v * v;
      }
      const double norm = std::sqrt(ss);
      const double denom = std::max(norm, kNormEps);
      norms[static_cast<std::size_t>(i) * hw + s] = static_cast<T>(norm);
      T* zp = z.data() + (static_cast<std::size_t>(i) * hw + s) * d;
      for (int c = 0; c < d; ++c) zp[c] = static_cast<T>((fp[c * hw + s] - mean) / denom);
    }
  }
}

// Backward of standardize_fibers: dz [N, HW, d] -> df [N, d, H, W] (+=).
template <typename T>
void standardize_fibers_backward(const Tensor<T>& z, const std::vector<T>& norms,
                                 CorrelationMode mode, const Tensor<T>& dz, Tensor<T>& df) {
  const int n = df.dim(0), d = df.dim(1), h = df.dim(2), w = df.dim(3);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::vector<double> dc(static_cast<std::size_t>(d));
  for (int i = 0; i < n; ++i) {
    T* out = df.data() + static_cast<std::size_t>(i) * d * hw;
    for (std::size_t s = 0; s < hw; ++s) {
      const T* zp = z.data() + (static_cast<std::size_t>(i) * hw + s) * d;
      const T* gp = dz.data() + (static_cast<std::size_t>(i) * hw + s) * d;
      const double norm = norms[static_cast<std::size_t>(i) * hw + s];
      const double denom = std::max(norm, kNormEps);
      if (norm > kNormEps) {
        double dot = 0.0;
        for (int c = 0; c < d; ++c) dot += static_cast<double>(zp[c]) * gp[c];
        for (int c = 0; c < d; ++c) dc[c] = (gp[c] - zp[c] * dot) / denom;
      } else {
        for (int c = 0; c < d; ++c) dc[c] = gp[c] / denom;
      }
      if (mode == CorrelationMode::pearson) {
        double mean_dc = 0.0;
        for (int c = 0; c < d; ++c) mean_dc += dc[c];
        mean_dc /= d;
        for (int c = 0; c < d; ++c) dc[c] -= mean_dc;
      }
      for (int c = 0; c < d; ++c) out[c * hw + s] += static_cast<T>(dc[c]);
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> correlate(const Tensor<T>& f_moving, const Tensor<T>& f_fixed, CorrelationMode mode,
                    CorrelationCache<T>* cache) {
  if (f_moving.ndim() != 4 || f_fixed.ndim() != 4 || f_moving.shape() != f_fixed.shape()) {
    throw NumericError("correlate: feature maps must share an [N, d, H, W] shape");
  }
  const int n = f_moving.dim(0), d = f_moving.dim(1), h = f_moving.dim(2), w = f_moving.dim(3);
  const int hw = h * w;

  CorrelationCache<T> local;
  CorrelationCache<T>& c = cache ? *cache : local;
  c.mode = mode;
  standardize_fibers(f_moving, mode, c.z_moving, c.norm_moving);
  standardize_fibers(f_fixed, mode, c.z_fixed, c.norm_fixed);

  Tensor<T> out({n, hw, h, w});
  RowMat<T> m(hw, hw);
  for (int i = 0; i < n; ++i) {
    Eigen::Map<const RowMat<T>> zm(c.z_moving.data() + static_cast<std::size_t>(i) * hw * d, hw, d);
    Eigen::Map<const RowMat<T>> zf(c.z_fixed.data() + static_cast<std::size_t>(i) * hw * d, hw, d);
    m.noalias() = zm * zf.transpose();  // [l_moving, l_fixed]
    T* op = out.data() + static_cast<std::size_t>(i) * hw * hw;
    for (int p = 0; p < h; ++p) {
      for (int q = 0; q < w; ++q) {
        const int lf = p * w + q;
        const int k = corr_pack_index(p, q, h);
        T* channel = op + static_cast<std::size_t>(k) * hw;
        for (int lm = 0; lm < hw; ++lm) channel[lm] = m(lm, lf);
      }
    }
  }
  return out;
}

template <typename T>
void correlate_backward(const CorrelationCache<T>& cache, const Tensor<T>& grad_out,
                        Tensor<T>& d_moving, Tensor<T>& d_fixed) {
  const int n = d_moving.dim(0), d = d_moving.dim(1), h = d_moving.dim(2), w = d_moving.dim(3);
  const int hw = h * w;

  Tensor<T> dz_m({n, hw, d});
  Tensor<T> dz_f({n, hw, d});
  RowMat<T> dm(hw, hw);
  for (int i = 0; i < n; ++i) {
    const T* gp = grad_out.data() + static_cast<std::size_t>(i) * hw * hw;
    for (int p = 0; p < h; ++p) {
      for (int q = 0; q < w; ++q) {
        const int lf = p * w + q;
        const int k = corr_pack_index(p, q, h);
        const T* channel = gp + static_cast<std::size_t>(k) * hw;
        for (int lm = 0; lm < hw; ++lm) dm(lm, lf) = channel[lm];
      }
    }
    Eigen::Map<const RowMat<T>> zm(cache.z_moving.data() + static_cast<std::size_t>(i) * hw * d,
                                   hw, d);
    Eigen::Map<const RowMat<T>> zf(cache.z_fixed.data() + static_cast<std::size_t>(i) * hw * d,
                                   hw, d);
    Eigen::Map<RowMat<T>> dzm(dz_m.data() + static_cast<std::size_t>(i) * hw * d, hw, d);
    Eigen::Map<RowMat<T>> dzf(dz_f.data() + static_cast<std::size_t>(i) * hw * d, hw, d);
    dzm.noalias() = dm * zf;
    dzf.noalias() = dm.transpose() * zm;
  }
  standardize_fibers_backward(cache.z_moving, cache.norm_moving, cache.mode, dz_m, d_moving);
  standardize_fibers_backward(cache.z_fixed, cache.norm_fixed, cache.mode, dz_f, d_fixed);
}

template <typename T>
Tensor<T> normalize_correlation(const Tensor<T>& raw) {
  const int n = raw.dim(0), k = raw.dim(1), h = raw.dim(2), w = raw.dim(3);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor<T> out({n, k, h, w});
  for (int i = 0; i < n; ++i) {
    const T* rp = raw.data() + static_cast<std::size_t>(i) * k * hw;
    T* op = out.data() + static_cast<std::size_t>(i) * k * hw;
    for (std::size_t s = 0; s < hw; ++s) {
      double ss = 0.0;
      for (int c = 0; c < k; ++c) {
        const double v = rp[c * hw + s] > T(0) ? rp[c * hw + s] : T(0);
        ss += v * v;
      }
      const double denom = std::max(std::sqrt(ss), kNormEps);
      for (int c = 0; c < k; ++c) {
        const T v = rp[c * hw + s] > T(0) ? rp[c * hw + s] : T(0);
        op[c * hw + s] = static_cast<T>(v / denom);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> normalize_correlation_backward(const Tensor<T>& raw, const Tensor<T>& grad_out) {
  const int n = raw.dim(0), k = raw.dim(1), h = raw.dim(2), w = raw.dim(3);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor<T> dx({n, k, h, w});
  for (int i = 0; i < n; ++i) {
    const T* rp = raw.data() + static_cast<std::size_t>(i) * k * hw;
    const T* gp = grad_out.data() + static_cast<std::size_t>(i) * k * hw;
    T* dp = dx.data() + static_cast<std::size_t>(i) * k * hw;
    for (std::size_t s = 0; s < hw; ++s) {
      double ss = 0.0;
      for (int c = 0; c < k; ++c) {
        const double v = rp[c * hw + s] > T(0) ? rp[c * hw + s] : T(0);
        ss += v * v;
      }
      const double norm = std::sqrt(ss);
      const double denom = std::max(norm, kNormEps);
      if (norm > kNormEps) {
        double dot = 0.0;
        for (int c = 0; c < k; ++c) {
          const double y = (rp[c * hw + s] > T(0) ? rp[c * hw + s] : T(0)) / denom;
          dot += y * gp[c * hw + s];
        }
        for (int c = 0; c < k; ++c) {
          const double r = rp[c * hw + s] > T(0) ? rp[c * hw + s] : T(0);
          const double y = r / denom;
          const double dr = (gp[c * hw + s] - y * dot) / denom;
          dp[c * hw + s] = rp[c * hw + s] > T(0) ? static_cast<T>(dr) : T(0);
        }
      } else {
        for (int c = 0; c < k; ++c) {
          const double dr = gp[c * hw + s] / denom;
          dp[c * hw + s] = rp[c * hw + s] > T(0) ? static_cast<T>(dr) : T(0);
        }
      }
    }
  }
  return dx;
}

template Tensor<float> correlate(const Tensor<float>&, const Tensor<float>&, CorrelationMode,
                                 CorrelationCache<float>*);
template Tensor<double> correlate(const Tensor<double>&, const Tensor<double>&, CorrelationMode,
                                  CorrelationCache<double>*);
template void correlate_backward(const CorrelationCache<float>&, const Tensor<float>&,
                                 Tensor<float>&, Tensor<float>&);
template void correlate_backward(const CorrelationCache<double>&, const Tensor<double>&,
                                 Tensor<double>&, Tensor<double>&);
template Tensor<float> normalize_correlation(const Tensor<float>&);
template Tensor<double> normalize_correlation(const Tensor<double>&);
template Tensor<float> normalize_correlation_backward(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> normalize_correlation_backward(const Tensor<double>&,
                                                       const Tensor<double>&);

}  // namespace mmreg::nn
