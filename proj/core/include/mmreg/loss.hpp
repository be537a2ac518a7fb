#pragma once

#include "mmreg/image.hpp"
#include "mmreg/tensor.hpp"

namespace mmreg {

// Weight of the distribution-distance regularizer in the total objective.
inline constexpr double kDefaultLambdaReg = 0.01;

// Per-batch loss decomposition; total = intensity + dice + lambda_reg * mmd.
struct LossBreakdown {
  double intensity = 0.0;
  double dice = 0.0;
  double mmd = 0.0;
  double lambda_reg = kDefaultLambdaReg;
  double total = 0.0;
};

enum class MmdKernel { linear, rbf };

// How feature-map samples are drawn for the MMD term: every spatial
// location's L2-normalized fiber pooled across the batch, or one
// global-average-pooled vector per image.
enum class MmdSampling { fibers, pooled };

namespace nn {

// Mean squared intensity difference over all elements. Shapes must match.
template <typename T>
double intensity_loss(const Tensor<T>& fixed, const Tensor<T>& warped);

// d/d warped of intensity_loss, scaled by `upstream`; accumulates (+=).
template <typename T>
void intensity_loss_backward(const Tensor<T>& fixed, const Tensor<T>& warped, double upstream,
                             Tensor<T>& d_warped);

// Soft Dice loss 1 - (2*sum(f*w) + eps) / (sum(f) + sum(w) + eps),
// eps = 1e-6. `warped` may be soft (bilinear-resampled) in [0, 1].
template <typename T>
double dice_loss(const Tensor<T>& fixed_mask, const Tensor<T>& warped_mask);

template <typename T>
void dice_loss_backward(const Tensor<T>& fixed_mask, const Tensor<T>& warped_mask,
                        double upstream, Tensor<T>& d_warped_mask);

// Squared linear-kernel MMD between two sample sets [Na, d] and [Nb, d]:
// || mean(a) - mean(b) ||^2.
template <typename T>
double mmd_loss(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
void mmd_loss_backward(const Tensor<T>& a, const Tensor<T>& b, double upstream, Tensor<T>& da,
                       Tensor<T>& db);

// RBF-kernel MMD^2, unbiased estimator clamped at 0, with the
// median-of-squared-distances bandwidth heuristic over the pooled samples:
//   k(x, y) = exp(-||x - y||^2 / h),  h = median_{i<j} ||z_i - z_j||^2.
// The bandwidth is treated as a constant in the gradient. Requires at least
// 2 samples per set.
template <typename T>
double mmd_loss_rbf(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
void mmd_loss_rbf_backward(const Tensor<T>& a, const Tensor<T>& b, double upstream, Tensor<T>& da,
                           Tensor<T>& db);

// Flattens feature maps [N, d, H, W] into MMD sample matrices.
template <typename T>
Tensor<T> feature_fibers(const Tensor<T>& features);  // [N*H*W, d]
template <typename T>
void feature_fibers_backward(const Tensor<T>& d_samples, Tensor<T>& d_features);  // +=

template <typename T>
Tensor<T> feature_pooled(const Tensor<T>& features);  // [N, d] (spatial mean)
template <typename T>
void feature_pooled_backward(const Tensor<T>& d_samples, Tensor<T>& d_features);  // +=

// Assembles the full objective from its pieces.
template <typename T>
LossBreakdown total_loss(const Tensor<T>& fixed, const Tensor<T>& warped,
                         const Tensor<T>& fixed_mask, const Tensor<T>& warped_mask,
                         const Tensor<T>& moving_samples, const Tensor<T>& fixed_samples,
                         double lambda_reg = kDefaultLambdaReg,
                         MmdKernel kernel = MmdKernel::linear);

}  // namespace nn

// Image-level forms of the training objectives.
double intensity_loss(const GridImage& fixed, const GridImage& warped);
double dice_loss(const BinaryMask& fixed_mask, const GridImage& warped_soft_mask);
double dice_loss(const BinaryMask& fixed_mask, const BinaryMask& warped_mask);

}  // namespace mmreg
