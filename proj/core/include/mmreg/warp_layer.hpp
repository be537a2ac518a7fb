#pragma once

#include "mmreg/tensor.hpp"

namespace mmreg::nn {

// Differentiable batched backward-warp. img is [N, C, H, W]; theta is
// [N, 6] rows laid out [a11, a12, tx, a21, a22, ty] over normalized
// coordinates (the same convention as AffineParams). Output grid is
// (out_h, out_w); samples outside the image fill with 0. Bilinear only --
// this is the training-path resampler.
template <typename T>
Tensor<T> warp_batch(const Tensor<T>& img, const Tensor<T>& theta, int out_h, int out_w);

// Gradient of the warp output w.r.t. theta; returns [N, 6]. The image is
// treated as a constant (synthetic training inputs are leaves).
template <typename T>
Tensor<T> warp_batch_backward_theta(const Tensor<T>& img, const Tensor<T>& theta, int out_h,
                                    int out_w, const Tensor<T>& grad_out);

}  // namespace mmreg::nn
