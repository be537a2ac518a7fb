#include "mmreg/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "mmreg/error.hpp"

namespace mmreg::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Column chunking keeps the im2col scratch buffer near this many bytes.
constexpr std::size_t kIm2ColBudgetBytes = 16u << 20;

template <typename T>
void check_nchw(const Tensor<T>& x, const char* who) {
  if (x.ndim() != 4) throw NumericError(std::string(who) + ": expected NCHW input");
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(int in_ch, int out_ch, int ksize, int stride, int pad, bool with_bias)
    : in_ch_(in_ch), out_ch_(out_ch), ksize_(ksize), stride_(stride), pad_(pad),
      with_bias_(with_bias) {
  weight = Tensor<T>({out_ch, in_ch * ksize * ksize});
  grad_weight = Tensor<T>({out_ch, in_ch * ksize * ksize});
  bias = Tensor<T>({out_ch});
  grad_bias = Tensor<T>({out_ch});
}

template <typename T>
void Conv2d<T>::init_he(Rng& rng) {
  const double stddev = std::sqrt(2.0 / (static_cast<double>(in_ch_) * ksize_ * ksize_));
  for (std::size_t i = 0; i < weight.size(); ++i) weight[i] = static_cast<T>(rng.normal(0.0, stddev));
  bias.set_zero();
}

namespace {

// Fills a [K x cols] slab of the im2col matrix for output columns
// [col0, col0+cols) of sample x_n.
template <typename T>
void im2col_chunk(const T* x_n, int in_ch, int in_h, int in_w, int ksize, int stride, int pad,
                  int out_w, int col0, int cols, T* col_buf) {
  const int K = in_ch * ksize * ksize;
  for (int r = 0; r < K; ++r) {
    const int c = r / (ksize * ksize);
    const int ky = (r / ksize) % ksize;
    const int kx = r % ksize;
    T* dst = col_buf + static_cast<std::size_t>(r) * cols;
    for (int j = 0; j < cols; ++j) {
      const int idx = col0 + j;
      const int oy = idx / out_w;
      const int ox = idx % out_w;
      const int iy = oy * stride - pad + ky;
      const int ix = ox * stride - pad + kx;
      if (iy >= 0 && iy < in_h && ix >= 0 && ix < in_w) {
        dst[j] = x_n[(static_cast<std::size_t>(c) * in_h + iy) * in_w + ix];
      } else {
        dst[j] = T(0);
      }
    }
  }
}

template <typename T>
void col2im_chunk_add(const T* col_buf, int in_ch, int in_h, int in_w, int ksize, int stride,
                      int pad, int out_w, int col0, int cols, T* dx_n) {
  const int K = in_ch * ksize * ksize;
  for (int r = 0; r < K; ++r) {
    const int c = r / (ksize * ksize);
    const int ky = (r / ksize) % ksize;
    const int kx = r % ksize;
    const T* src = col_buf + static_cast<std::size_t>(r) * cols;
    for (int j = 0; j < cols; ++j) {
      const int idx = col0 + j;
      const int oy = idx / out_w;
      const int ox = idx % out_w;
      const int iy = oy * stride - pad + ky;
      const int ix = ox * stride - pad + kx;
      if (iy >= 0 && iy < in_h && ix >= 0 && ix < in_w) {
        dx_n[(static_cast<std::size_t>(c) * in_h + iy) * in_w + ix] += src[j];
      }
    }
  }
}

inline int chunk_columns(int K, int total, std::size_t elem_size) {
  std::size_t budget = kIm2ColBudgetBytes / (static_cast<std::size_t>(K) * elem_size);
  if (budget < 256) budget = 256;
  if (budget > static_cast<std::size_t>(total)) budget = static_cast<std::size_t>(total);
  return static_cast<int>(budget);
}

}  // namespace

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, bool training) const {
  check_nchw(x, "Conv2d");
  if (x.dim(1) != in_ch_) throw NumericError("Conv2d: channel mismatch");
  const int n = x.dim(0), in_h = x.dim(2), in_w = x.dim(3);
  const int out_h = out_size(in_h), out_w = out_size(in_w);
  if (out_h <= 0 || out_w <= 0) throw NumericError("Conv2d: output would be empty");
  const int K = in_ch_ * ksize_ * ksize_;
  const int ohw = out_h * out_w;

  Tensor<T> y({n, out_ch_, out_h, out_w});
  const int chunk = std::min(ohw, chunk_columns(K, ohw, sizeof(T)));
  std::vector<T> col_buf(static_cast<std::size_t>(K) * chunk);
  ConstMatMap<T> w_map(weight.data(), out_ch_, K);

  for (int i = 0; i < n; ++i) {
    const T* x_n = x.data() + static_cast<std::size_t>(i) * in_ch_ * in_h * in_w;
    T* y_n = y.data() + static_cast<std::size_t>(i) * out_ch_ * ohw;
    for (int col0 = 0; col0 < ohw; col0 += chunk) {
      const int cols = std::min(chunk, ohw - col0);
      im2col_chunk(x_n, in_ch_, in_h, in_w, ksize_, stride_, pad_, out_w, col0, cols,
                   col_buf.data());
      ConstMatMap<T> col_map(col_buf.data(), K, cols);
      // y rows are out_ch x ohw per sample; write the chunk columns
      Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>> y_map(y_n + col0, out_ch_, cols,
                                                           Eigen::OuterStride<>(ohw));
      y_map.noalias() = w_map * col_map;
    }
    if (with_bias_) {
      for (int c = 0; c < out_ch_; ++c) {
        T* row = y_n + static_cast<std::size_t>(c) * ohw;
        const T b = bias[c];
        for (int j = 0; j < ohw; ++j) row[j] += b;
      }
    }
  }
  if (training) cached_input_ = x;
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out, bool need_grad_input) {
  const Tensor<T>& x = cached_input_;
  if (x.empty()) throw NumericError("Conv2d::backward without cached forward");
  const int n = x.dim(0), in_h = x.dim(2), in_w = x.dim(3);
  const int out_h = out_size(in_h), out_w = out_size(in_w);
  const int K = in_ch_ * ksize_ * ksize_;
  const int ohw = out_h * out_w;

  Tensor<T> dx;
  if (need_grad_input) dx = Tensor<T>({n, in_ch_, in_h, in_w});

  const int chunk = std::min(ohw, chunk_columns(K, ohw, sizeof(T)));
  std::vector<T> col_buf(static_cast<std::size_t>(K) * chunk);
  ConstMatMap<T> w_map(weight.data(), out_ch_, K);
  MatMap<T> dw_map(grad_weight.data(), out_ch_, K);

  for (int i = 0; i < n; ++i) {
    const T* x_n = x.data() + static_cast<std::size_t>(i) * in_ch_ * in_h * in_w;
    const T* dy_n = grad_out.data() + static_cast<std::size_t>(i) * out_ch_ * ohw;
    for (int col0 = 0; col0 < ohw; col0 += chunk) {
      const int cols = std::min(chunk, ohw - col0);
      im2col_chunk(x_n, in_ch_, in_h, in_w, ksize_, stride_, pad_, out_w, col0, cols,
                   col_buf.data());
      ConstMatMap<T> col_map(col_buf.data(), K, cols);
      Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>> dy_map(
          dy_n + col0, out_ch_, cols, Eigen::OuterStride<>(ohw));
      dw_map.noalias() += dy_map * col_map.transpose();
      if (need_grad_input) {
        RowMat<T> dcol = w_map.transpose() * dy_map;  // [K x cols]
        T* dx_n = dx.data() + static_cast<std::size_t>(i) * in_ch_ * in_h * in_w;
        col2im_chunk_add(dcol.data(), in_ch_, in_h, in_w, ksize_, stride_, pad_, out_w, col0,
                         cols, dx_n);
      }
    }
    if (with_bias_) {
      for (int c = 0; c < out_ch_; ++c) {
        const T* row = dy_n + static_cast<std::size_t>(c) * ohw;
        T acc = T(0);
        for (int j = 0; j < ohw; ++j) acc += row[j];
        grad_bias[c] += acc;
      }
    }
  }
  return dx;
}

template <typename T>
void Conv2d<T>::collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  if (!this->trainable) return;
  out.push_back({prefix + ".weight", &weight, &grad_weight});
  if (with_bias_) out.push_back({prefix + ".bias", &bias, &grad_bias});
}

template <typename T>
void Conv2d<T>::collect_state(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
  out.push_back({prefix + ".weight", &weight});
  if (with_bias_) out.push_back({prefix + ".bias", &bias});
}

// ------------------------------------------------------------ BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(int channels, double momentum, double eps)
    : channels_(channels), momentum_(momentum), eps_(eps) {
  weight = Tensor<T>({channels});
  weight.fill(T(1));
  bias = Tensor<T>({channels});
  running_mean = Tensor<T>({channels});
  running_var = Tensor<T>({channels});
  running_var.fill(T(1));
  grad_weight = Tensor<T>({channels});
  grad_bias = Tensor<T>({channels});
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, bool training) const {
  check_nchw(x, "BatchNorm2d");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (c != channels_) throw NumericError("BatchNorm2d: channel mismatch");
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const std::size_t m = static_cast<std::size_t>(n) * hw;

  Tensor<T> y({n, c, h, w});
  if (training) {
    cached_xhat_ = Tensor<T>({n, c, h, w});
    cached_invstd_.assign(c, T(0));
    cached_training_mode_ = true;
    for (int ch = 0; ch < c; ++ch) {
      double mean = 0.0, var = 0.0;
      for (int i = 0; i < n; ++i) {
        const T* p = x.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
        for (std::size_t j = 0; j < hw; ++j) mean += p[j];
      }
      mean /= static_cast<double>(m);
      for (int i = 0; i < n; ++i) {
        const T* p = x.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
        for (std::size_t j = 0; j < hw; ++j) {
          const double d = p[j] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(m);
      const double invstd = 1.0 / std::sqrt(var + eps_);
      cached_invstd_[ch] = static_cast<T>(invstd);
      const T g = weight[ch], b = bias[ch];
      for (int i = 0; i < n; ++i) {
        const T* p = x.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
        T* xh = cached_xhat_.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
        T* q = y.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
        for (std::size_t j = 0; j < hw; ++j) {
          const T v = static_cast<T>((p[j] - mean) * invstd);
          xh[j] = v;
          q[j] = g * v + b;
        }
      }
      // running stats use the unbiased variance
      const double unbiased = m > 1 ? var * static_cast<double>(m) / (m - 1) : var;
      running_mean[ch] = static_cast<T>((1.0 - momentum_) * running_mean[ch] + momentum_ * mean);
      running_var[ch] = static_cast<T>((1.0 - momentum_) * running_var[ch] + momentum_ * unbiased);
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      const double invstd = 1.0 / std::sqrt(static_cast<double>(running_var[ch]) + eps_);
      const double mean = running_mean[ch];
      const T g = weight[ch], b = bias[ch];
      for (int i = 0; i < n; ++i) {
        const T* p = x.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
        T* q = y.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
        for (std::size_t j = 0; j < hw; ++j) {
          q[j] = static_cast<T>(g * ((p[j] - mean) * invstd) + b);
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& grad_out, bool need_grad_input) {
  if (cached_training_mode_) {
    const Tensor<T>& xh = cached_xhat_;
    if (xh.empty()) throw NumericError("BatchNorm2d::backward without cached forward");
    const int n = xh.dim(0), c = xh.dim(1), h = xh.dim(2), w = xh.dim(3);
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const double m = static_cast<double>(n) * hw;
    Tensor<T> dx;
    if (need_grad_input) dx = Tensor<T>({n, c, h, w});
    for (int ch = 0; ch < c; ++ch) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int i = 0; i < n; ++i) {
        const T* dy = grad_out.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
        const T* xv = xh.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
        for (std::size_t j = 0; j < hw; ++j) {
          sum_dy += dy[j];
          sum_dy_xhat += static_cast<double>(dy[j]) * xv[j];
        }
      }
      grad_weight[ch] += static_cast<T>(sum_dy_xhat);
      grad_bias[ch] += static_cast<T>(sum_dy);
      if (need_grad_input) {
        const double g = weight[ch];
        const double invstd = cached_invstd_[ch];
        const double k1 = sum_dy / m;
        const double k2 = sum_dy_xhat / m;
        for (int i = 0; i < n; ++i) {
          const T* dy = grad_out.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
          const T* xv = xh.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
          T* dq = dx.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
          for (std::size_t j = 0; j < hw; ++j) {
            dq[j] = static_cast<T>(g * invstd * (dy[j] - k1 - xv[j] * k2));
          }
        }
      }
    }
    return dx;
  }
  // eval-mode backward: a per-channel affine scale
  const int n = grad_out.dim(0), c = grad_out.dim(1), h = grad_out.dim(2), w = grad_out.dim(3);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor<T> dx;
  if (need_grad_input) {
    dx = Tensor<T>({n, c, h, w});
    for (int ch = 0; ch < c; ++ch) {
      const double scale =
          weight[ch] / std::sqrt(static_cast<double>(running_var[ch]) + eps_);
      for (int i = 0; i < n; ++i) {
        const T* dy = grad_out.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
        T* dq = dx.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
        for (std::size_t j = 0; j < hw; ++j) dq[j] = static_cast<T>(dy[j] * scale);
      }
    }
  }
  return dx;
}

template <typename T>
void BatchNorm2d<T>::collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  if (!this->trainable) return;
  out.push_back({prefix + ".weight", &weight, &grad_weight});
  out.push_back({prefix + ".bias", &bias, &grad_bias});
}

template <typename T>
void BatchNorm2d<T>::collect_state(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
  out.push_back({prefix + ".weight", &weight});
  out.push_back({prefix + ".bias", &bias});
  out.push_back({prefix + ".running_mean", &running_mean});
  out.push_back({prefix + ".running_var", &running_var});
}

// ------------------------------------------------------------------ ReLU

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x, bool training) const {
  Tensor<T> y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = y[i] > T(0) ? y[i] : T(0);
  if (training) cached_output_ = y;
  return y;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& grad_out, bool need_grad_input) {
  if (!need_grad_input) return {};
  const Tensor<T>& y = cached_output_;
  if (y.empty()) throw NumericError("ReLU::backward without cached forward");
  Tensor<T> dx = grad_out;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(y[i] > T(0))) dx[i] = T(0);
  }
  return dx;
}

// ------------------------------------------------------------- MaxPool2d

template <typename T>
MaxPool2d<T>::MaxPool2d(int ksize, int stride, int pad)
    : ksize_(ksize), stride_(stride), pad_(pad) {}

template <typename T>
Tensor<T> MaxPool2d<T>::forward(const Tensor<T>& x, bool training) const {
  check_nchw(x, "MaxPool2d");
  const int n = x.dim(0), c = x.dim(1), in_h = x.dim(2), in_w = x.dim(3);
  const int out_h = (in_h + 2 * pad_ - ksize_) / stride_ + 1;
  const int out_w = (in_w + 2 * pad_ - ksize_) / stride_ + 1;
  Tensor<T> y({n, c, out_h, out_w});
  if (training) {
    cached_argmax_ = Tensor<int>({n, c, out_h, out_w});
    cached_in_shape_ = x.shape();
  }
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const T* p = x.data() + (static_cast<std::size_t>(i) * c + ch) * in_h * in_w;
      for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
          T best = -std::numeric_limits<T>::infinity();
          int best_idx = -1;
          for (int ky = 0; ky < ksize_; ++ky) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= in_h) continue;
            for (int kx = 0; kx < ksize_; ++kx) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= in_w) continue;
              const T v = p[iy * in_w + ix];
              if (v > best) {
                best = v;
                best_idx = iy * in_w + ix;
              }
            }
          }
          y(i, ch, oy, ox) = best_idx >= 0 ? best : T(0);
          if (training) cached_argmax_(i, ch, oy, ox) = best_idx;
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> MaxPool2d<T>::backward(const Tensor<T>& grad_out, bool need_grad_input) {
  if (!need_grad_input) return {};
  if (cached_argmax_.empty()) throw NumericError("MaxPool2d::backward without cached forward");
  const int n = grad_out.dim(0), c = grad_out.dim(1), out_h = grad_out.dim(2),
            out_w = grad_out.dim(3);
  const int in_h = cached_in_shape_[2], in_w = cached_in_shape_[3];
  Tensor<T> dx(cached_in_shape_);
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      T* dp = dx.data() + (static_cast<std::size_t>(i) * c + ch) * in_h * in_w;
      for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
          const int idx = cached_argmax_(i, ch, oy, ox);
          if (idx >= 0) dp[idx] += grad_out(i, ch, oy, ox);
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(int in_features, int out_features)
    : in_features_(in_features), out_features_(out_features) {
  weight = Tensor<T>({out_features, in_features});
  grad_weight = Tensor<T>({out_features, in_features});
  bias = Tensor<T>({out_features});
  grad_bias = Tensor<T>({out_features});
}

template <typename T>
void Linear<T>::init_normal(Rng& rng, double stddev) {
  for (std::size_t i = 0; i < weight.size(); ++i) weight[i] = static_cast<T>(rng.normal(0.0, stddev));
  bias.set_zero();
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, bool training) const {
  if (x.ndim() != 2 || x.dim(1) != in_features_) {
    throw NumericError("Linear: expected [N, " + std::to_string(in_features_) + "] input");
  }
  const int n = x.dim(0);
  Tensor<T> y({n, out_features_});
  ConstMatMap<T> xm(x.data(), n, in_features_);
  ConstMatMap<T> wm(weight.data(), out_features_, in_features_);
  MatMap<T> ym(y.data(), n, out_features_);
  ym.noalias() = xm * wm.transpose();
  for (int i = 0; i < n; ++i) {
    for (int o = 0; o < out_features_; ++o) y(i, o) += bias[o];
  }
  if (training) cached_input_ = x;
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_out, bool need_grad_input) {
  const Tensor<T>& x = cached_input_;
  if (x.empty()) throw NumericError("Linear::backward without cached forward");
  const int n = x.dim(0);
  ConstMatMap<T> xm(x.data(), n, in_features_);
  ConstMatMap<T> dym(grad_out.data(), n, out_features_);
  MatMap<T> dwm(grad_weight.data(), out_features_, in_features_);
  dwm.noalias() += dym.transpose() * xm;
  for (int i = 0; i < n; ++i) {
    for (int o = 0; o < out_features_; ++o) grad_bias[o] += grad_out(i, o);
  }
  Tensor<T> dx;
  if (need_grad_input) {
    dx = Tensor<T>({n, in_features_});
    MatMap<T> dxm(dx.data(), n, in_features_);
    ConstMatMap<T> wm(weight.data(), out_features_, in_features_);
    dxm.noalias() = dym * wm;
  }
  return dx;
}

template <typename T>
void Linear<T>::collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  if (!this->trainable) return;
  out.push_back({prefix + ".weight", &weight, &grad_weight});
  out.push_back({prefix + ".bias", &bias, &grad_bias});
}

template <typename T>
void Linear<T>::collect_state(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
  out.push_back({prefix + ".weight", &weight});
  out.push_back({prefix + ".bias", &bias});
}

// --------------------------------------------------------------- Flatten

template <typename T>
Tensor<T> Flatten<T>::forward(const Tensor<T>& x, bool training) const {
  if (training) cached_in_shape_ = x.shape();
  std::size_t per = x.size() / static_cast<std::size_t>(x.dim(0));
  return x.reshaped({x.dim(0), static_cast<int>(per)});
}

template <typename T>
Tensor<T> Flatten<T>::backward(const Tensor<T>& grad_out, bool need_grad_input) {
  if (!need_grad_input) return {};
  if (cached_in_shape_.empty()) throw NumericError("Flatten::backward without cached forward");
  return grad_out.reshaped(cached_in_shape_);
}

// --------------------------------------------------------- FeatureL2Norm

template <typename T>
Tensor<T> FeatureL2Norm<T>::forward(const Tensor<T>& x, bool training) const {
  check_nchw(x, "FeatureL2Norm");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const std::size_t chw = static_cast<std::size_t>(c) * hw;
  Tensor<T> y({n, c, h, w});
  std::vector<T> norms;
  if (training) norms.assign(static_cast<std::size_t>(n) * hw, T(0));
  for (int i = 0; i < n; ++i) {
    const T* xp = x.data() + i * chw;
    T* yp = y.data() + i * chw;
    for (std::size_t s = 0; s < hw; ++s) {
      double ss = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const double v = xp[ch * hw + s];
        ss += v * v;
      }
      const double norm = std::sqrt(ss);
      const double denom = std::max(norm, kNormEps);
      for (int ch = 0; ch < c; ++ch) yp[ch * hw + s] = static_cast<T>(xp[ch * hw + s] / denom);
      if (training) norms[static_cast<std::size_t>(i) * hw + s] = static_cast<T>(norm);
    }
  }
  if (training) {
    cached_output_ = y;
    cached_norm_ = std::move(norms);
  }
  return y;
}

template <typename T>
Tensor<T> FeatureL2Norm<T>::backward(const Tensor<T>& grad_out, bool need_grad_input) {
  if (!need_grad_input) return {};
  const Tensor<T>& y = cached_output_;
  if (y.empty()) throw NumericError("FeatureL2Norm::backward without cached forward");
  const int n = y.dim(0), c = y.dim(1), h = y.dim(2), w = y.dim(3);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const std::size_t chw = static_cast<std::size_t>(c) * hw;
  Tensor<T> dx({n, c, h, w});
  for (int i = 0; i < n; ++i) {
    const T* yp = y.data() + i * chw;
    const T* gp = grad_out.data() + i * chw;
    T* dp = dx.data() + i * chw;
    for (std::size_t s = 0; s < hw; ++s) {
      const double norm = cached_norm_[static_cast<std::size_t>(i) * hw + s];
      const double denom = std::max(norm, kNormEps);
      if (norm > kNormEps) {
        double dot = 0.0;
        for (int ch = 0; ch < c; ++ch) dot += static_cast<double>(yp[ch * hw + s]) * gp[ch * hw + s];
        for (int ch = 0; ch < c; ++ch) {
          dp[ch * hw + s] = static_cast<T>((gp[ch * hw + s] - yp[ch * hw + s] * dot) / denom);
        }
      } else {
        for (int ch = 0; ch < c; ++ch) dp[ch * hw + s] = static_cast<T>(gp[ch * hw + s] / denom);
      }
    }
  }
  return dx;
}

// ------------------------------------------------------------ Bottleneck

template <typename T>
Bottleneck<T>::Bottleneck(int in_ch, int mid_ch, int out_ch, int stride, Rng& rng) {
  conv1_ = std::make_unique<Conv2d<T>>(in_ch, mid_ch, 1, 1, 0, false);
  bn1_ = std::make_unique<BatchNorm2d<T>>(mid_ch);
  conv2_ = std::make_unique<Conv2d<T>>(mid_ch, mid_ch, 3, stride, 1, false);
  bn2_ = std::make_unique<BatchNorm2d<T>>(mid_ch);
  conv3_ = std::make_unique<Conv2d<T>>(mid_ch, out_ch, 1, 1, 0, false);
  bn3_ = std::make_unique<BatchNorm2d<T>>(out_ch);
  if (stride != 1 || in_ch != out_ch) {
    down_conv_ = std::make_unique<Conv2d<T>>(in_ch, out_ch, 1, stride, 0, false);
    down_bn_ = std::make_unique<BatchNorm2d<T>>(out_ch);
    down_conv_->init_he(rng);
  }
  conv1_->init_he(rng);
  conv2_->init_he(rng);
  conv3_->init_he(rng);
}

template <typename T>
void Bottleneck<T>::set_last_conv_trainable(bool v) {
  conv3_->trainable = v;
  this->trainable = v;
}

template <typename T>
Tensor<T> Bottleneck<T>::forward(const Tensor<T>& x, bool training) const {
  // Frozen BN layers use running statistics in all modes; the training flag
  // only controls gradient caching for the optionally trainable last conv.
  const bool cache = training && conv3_->has_trainable();
  Tensor<T> b = conv1_->forward(x, false);
  b = bn1_->forward(b, false);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = b[i] > T(0) ? b[i] : T(0);
  b = conv2_->forward(b, false);
  b = bn2_->forward(b, false);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = b[i] > T(0) ? b[i] : T(0);
  if (cache) cached_conv3_in_ = b;
  b = conv3_->forward(b, cache);
  b = bn3_->forward(b, false);

  Tensor<T> shortcut;
  if (down_conv_) {
    shortcut = down_conv_->forward(x, false);
    shortcut = down_bn_->forward(shortcut, false);
  } else {
    shortcut = x;
  }
  for (std::size_t i = 0; i < b.size(); ++i) {
    b[i] += shortcut[i];
    b[i] = b[i] > T(0) ? b[i] : T(0);
  }
  if (cache) cached_sum_ = b;
  return b;
}

template <typename T>
Tensor<T> Bottleneck<T>::backward(const Tensor<T>& grad_out, bool need_grad_input) {
  if (need_grad_input) {
    throw NumericError("Bottleneck::backward: input gradients are not supported; "
                       "only the final conv can be fine-tuned");
  }
  if (!conv3_->has_trainable() || cached_sum_.empty()) {
    throw NumericError("Bottleneck::backward without a trainable cached forward");
  }
  Tensor<T> d = grad_out;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!(cached_sum_[i] > T(0))) d[i] = T(0);
  }
  // through the frozen bn3: per-channel scale
  const int c = d.dim(1);
  const int n = d.dim(0), h = d.dim(2), w = d.dim(3);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int ch = 0; ch < c; ++ch) {
    const double scale = bn3_->weight[ch] /
                         std::sqrt(static_cast<double>(bn3_->running_var[ch]) + 1e-5);
    for (int i = 0; i < n; ++i) {
      T* p = d.data() + (static_cast<std::size_t>(i) * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) p[j] = static_cast<T>(p[j] * scale);
    }
  }
  conv3_->backward(d, false);
  return {};
}

template <typename T>
void Bottleneck<T>::collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  conv1_->collect_params(prefix + ".conv1", out);
  conv2_->collect_params(prefix + ".conv2", out);
  conv3_->collect_params(prefix + ".conv3", out);
  bn1_->collect_params(prefix + ".bn1", out);
  bn2_->collect_params(prefix + ".bn2", out);
  bn3_->collect_params(prefix + ".bn3", out);
  if (down_conv_) {
    down_conv_->collect_params(prefix + ".down_conv", out);
    down_bn_->collect_params(prefix + ".down_bn", out);
  }
}

template <typename T>
void Bottleneck<T>::collect_state(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
  conv1_->collect_state(prefix + ".conv1", out);
  conv2_->collect_state(prefix + ".conv2", out);
  conv3_->collect_state(prefix + ".conv3", out);
  bn1_->collect_state(prefix + ".bn1", out);
  bn2_->collect_state(prefix + ".bn2", out);
  bn3_->collect_state(prefix + ".bn3", out);
  if (down_conv_) {
    down_conv_->collect_state(prefix + ".down_conv", out);
    down_bn_->collect_state(prefix + ".down_bn", out);
  }
}

// ------------------------------------------------------------ Sequential

template <typename T>
std::size_t Sequential<T>::first_trainable_index() const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i]->has_trainable()) return i;
  }
  return layers_.size();
}

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x, bool training) const {
  return forward_range(x, 0, layers_.size(), training);
}

template <typename T>
Tensor<T> Sequential<T>::forward_range(const Tensor<T>& x, std::size_t begin, std::size_t end,
                                       bool training) const {
  const std::size_t cache_from = training ? first_trainable_index() : layers_.size();
  Tensor<T> cur = x;
  for (std::size_t i = begin; i < end; ++i) {
    cur = layers_[i]->forward(cur, training && i >= cache_from);
  }
  return cur;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& grad_out, bool need_input_grad) {
  const std::size_t cache_from = first_trainable_index();
  if (cache_from == layers_.size()) {
    throw NumericError("Sequential::backward: no trainable layers");
  }
  if (need_input_grad && cache_from != 0) {
    throw NumericError("Sequential::backward: input gradient requires a fully trainable stack");
  }
  Tensor<T> d = grad_out;
  for (std::size_t i = layers_.size(); i-- > cache_from;) {
    const bool need_dx = i > cache_from || need_input_grad;
    d = layers_[i]->backward(d, need_dx);
  }
  return d;
}

template <typename T>
void Sequential<T>::collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->collect_params(prefix + "." + std::to_string(i), out);
  }
}

template <typename T>
void Sequential<T>::collect_state(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->collect_state(prefix + "." + std::to_string(i), out);
  }
}

// --------------------------------------------------------------- Adam

template <typename T>
AdamOptimizer<T>::AdamOptimizer(std::vector<ParamRef<T>> params, double lr, double beta1,
                                double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].value->size(), T(0));
    v_[i].assign(params_[i].value->size(), T(0));
  }
}

template <typename T>
void AdamOptimizer<T>::zero_grad() {
  for (auto& p : params_) p.grad->set_zero();
}

template <typename T>
double AdamOptimizer<T>::step(double clip_norm) {
  double sq = 0.0;
  for (auto& p : params_) {
    const Tensor<T>& g = *p.grad;
    for (std::size_t i = 0; i < g.size(); ++i) sq += static_cast<double>(g[i]) * g[i];
  }
  const double gnorm = std::sqrt(sq);
  double scale = 1.0;
  if (clip_norm > 0.0 && gnorm > clip_norm) scale = clip_norm / gnorm;

  ++step_count_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor<T>& w = *params_[k].value;
    Tensor<T>& g = *params_[k].grad;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]) * scale;
      m[i] = static_cast<T>(beta1_ * m[i] + (1.0 - beta1_) * gi);
      v[i] = static_cast<T>(beta2_ * v[i] + (1.0 - beta2_) * gi * gi);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] = static_cast<T>(w[i] - lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }
  return gnorm;
}

// explicit instantiations
template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class ReLU<float>;
template class ReLU<double>;
template class MaxPool2d<float>;
template class MaxPool2d<double>;
template class Linear<float>;
template class Linear<double>;
template class Flatten<float>;
template class Flatten<double>;
template class FeatureL2Norm<float>;
template class FeatureL2Norm<double>;
template class Bottleneck<float>;
template class Bottleneck<double>;
template class Sequential<float>;
template class Sequential<double>;
template class AdamOptimizer<float>;
template class AdamOptimizer<double>;

}  // namespace mmreg::nn
