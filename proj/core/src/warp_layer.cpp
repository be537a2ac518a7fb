#include "mmreg/warp_layer.hpp"

#include <cmath>

#include "mmreg/error.hpp"

namespace mmreg::nn {

namespace {

template <typename T>
inline double pix(const T* img_c, int h, int w, int y, int x) {
  if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
  return img_c[static_cast<std::size_t>(y) * w + x];
}

}  // namespace

template <typename T>
Tensor<T> warp_batch(const Tensor<T>& img, const Tensor<T>& theta, int out_h, int out_w) {
  if (img.ndim() != 4 || theta.ndim() != 2 || theta.dim(1) != 6 || theta.dim(0) != img.dim(0)) {
    throw NumericError("warp_batch: expected img [N,C,H,W] and theta [N,6]");
  }
  const int n = img.dim(0), c = img.dim(1), ih = img.dim(2), iw = img.dim(3);
  Tensor<T> out({n, c, out_h, out_w});
  for (int i = 0; i < n; ++i) {
    const T* th = theta.data() + static_cast<std::size_t>(i) * 6;
    for (int y = 0; y < out_h; ++y) {
      const double ny = 2.0 * y / (out_h - 1) - 1.0;
      for (int x = 0; x < out_w; ++x) {
        const double nx = 2.0 * x / (out_w - 1) - 1.0;
        const double mx = th[0] * nx + th[1] * ny + th[2];
        const double my = th[3] * nx + th[4] * ny + th[5];
        const double sx = (mx + 1.0) * 0.5 * (iw - 1);
        const double sy = (my + 1.0) * 0.5 * (ih - 1);
        const int x0 = static_cast<int>(std::floor(sx));
        const int y0 = static_cast<int>(std::floor(sy));
        const double ax = sx - x0;
        const double ay = sy - y0;
        for (int ch = 0; ch < c; ++ch) {
          const T* ip = img.data() + (static_cast<std::size_t>(i) * c + ch) * ih * iw;
          const double v00 = pix(ip, ih, iw, y0, x0);
          const double v01 = pix(ip, ih, iw, y0, x0 + 1);
          const double v10 = pix(ip, ih, iw, y0 + 1, x0);
          const double v11 = pix(ip, ih, iw, y0 + 1, x0 + 1);
          const double val = v00 * (1.0 - ax) * (1.0 - ay) + v01 * ax * (1.0 - ay) +
                             v10 * (1.0 - ax) * ay + v11 * ax * ay;
          out(i, ch, y, x) = static_cast<T>(val);
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> warp_batch_backward_theta(const Tensor<T>& img, const Tensor<T>& theta, int out_h,
                                    int out_w, const Tensor<T>& grad_out) {
  const int n = img.dim(0), c = img.dim(1), ih = img.dim(2), iw = img.dim(3);
  Tensor<T> dtheta({n, 6});
  const double half_w = 0.5 * (iw - 1);
  const double half_h = 0.5 * (ih - 1);
  for (int i = 0; i < n; ++i) {
    const T* th = theta.data() + static_cast<std::size_t>(i) * 6;
    double acc[6] = {0, 0, 0, 0, 0, 0};
    for (int y = 0; y < out_h; ++y) {
      const double ny = 2.0 * y / (out_h - 1) - 1.0;
      for (int x = 0; x < out_w; ++x) {
        const double nx = 2.0 * x / (out_w - 1) - 1.0;
        const double mx = th[0] * nx + th[1] * ny + th[2];
        const double my = th[3] * nx + th[4] * ny + th[5];
        const double sx = (mx + 1.0) * half_w;
        const double sy = (my + 1.0) * half_h;
        const int x0 = static_cast<int>(std::floor(sx));
        const int y0 = static_cast<int>(std::floor(sy));
        const double ax = sx - x0;
        const double ay = sy - y0;
        double g_sx = 0.0, g_sy = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          const T* ip = img.data() + (static_cast<std::size_t>(i) * c + ch) * ih * iw;
          const double v00 = pix(ip, ih, iw, y0, x0);
          const double v01 = pix(ip, ih, iw, y0, x0 + 1);
          const double v10 = pix(ip, ih, iw, y0 + 1, x0);
          const double v11 = pix(ip, ih, iw, y0 + 1, x0 + 1);
          const double g = grad_out(i, ch, y, x);
          g_sx += g * ((v01 - v00) * (1.0 - ay) + (v11 - v10) * ay);
          g_sy += g * ((v10 - v00) * (1.0 - ax) + (v11 - v01) * ax);
        }
        const double g_mx = g_sx * half_w;
        const double g_my = g_sy * half_h;
        acc[0] += g_mx * nx;
        acc[1] += g_mx * ny;
        acc[2] += g_mx;
        acc[3] += g_my * nx;
        acc[4] += g_my * ny;
        acc[5] += g_my;
      }
    }
    for (int k = 0; k < 6; ++k) dtheta(i, k) = static_cast<T>(acc[k]);
  }
  return dtheta;
}

template Tensor<float> warp_batch(const Tensor<float>&, const Tensor<float>&, int, int);
template Tensor<double> warp_batch(const Tensor<double>&, const Tensor<double>&, int, int);
template Tensor<float> warp_batch_backward_theta(const Tensor<float>&, const Tensor<float>&, int,
                                                 int, const Tensor<float>&);
template Tensor<double> warp_batch_backward_theta(const Tensor<double>&, const Tensor<double>&,
                                                  int, int, const Tensor<double>&);

}  // namespace mmreg::nn
