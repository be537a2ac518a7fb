#pragma once

#include <utility>

#include "mmreg/tensor.hpp"

namespace mmreg::nn {

// Similarity measure between feature fibers. Pearson centers each fiber
// before the normalized dot product; cosine skips the centering (offered for
// ablation).
enum class CorrelationMode { pearson, cosine };

// Fiber index packing of the correlation volume: the correlation between
// the moving fiber at (i, j) and the fixed fiber at row p, column q lives in
// channel k = p + H * q of spatial location (i, j) (0-based; column-major in
// the fixed map's coordinates).
inline int corr_pack_index(int p, int q, int height) { return p + height * q; }
inline std::pair<int, int> corr_unpack_index(int k, int height) {
  return {k % height, k / height};
}

template <typename T>
struct CorrelationCache {
  Tensor<T> z_moving;  // standardized fibers [N, HW, d]
  Tensor<T> z_fixed;
  std::vector<T> norm_moving;  // pre-guard fiber norms [N*HW]
  std::vector<T> norm_fixed;
  CorrelationMode mode = CorrelationMode::pearson;
};

// Pairwise correlation of two feature maps [N, d, H, W] -> [N, H*W, H, W].
// Pearson mode computes the population correlation coefficient along the
// channel axis; denominators are epsilon-guarded (kNormEps) and constant
// fibers correlate to 0. Raw entries lie in [-1, 1].
template <typename T>
Tensor<T> correlate(const Tensor<T>& f_moving, const Tensor<T>& f_fixed, CorrelationMode mode,
                    CorrelationCache<T>* cache = nullptr);

// Gradients w.r.t. both feature maps; accumulates into d_moving / d_fixed
// (which must be zero-initialized or hold prior gradient contributions).
template <typename T>
void correlate_backward(const CorrelationCache<T>& cache, const Tensor<T>& grad_out,
                        Tensor<T>& d_moving, Tensor<T>& d_fixed);

// ReLU + per-location L2 normalization of the correlation volume; negative
// entries zero, each fiber divided by max(||fiber||, kNormEps). All-zero
// fibers remain zero.
template <typename T>
Tensor<T> normalize_correlation(const Tensor<T>& raw);

template <typename T>
Tensor<T> normalize_correlation_backward(const Tensor<T>& raw, const Tensor<T>& grad_out);

}  // namespace mmreg::nn
