#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "mmreg/affine.hpp"
#include "mmreg/backbone.hpp"
#include "mmreg/correlation.hpp"
#include "mmreg/image.hpp"
#include "mmreg/layers.hpp"
#include "mmreg/manifest.hpp"
#include "mmreg/tensor.hpp"

namespace mmreg {

// Which feature extractor an activation came from.
enum class Branch { moving, fixed };

struct NetworkConfig {
  BackboneKind backbone = BackboneKind::vgg16_block4;
  bool fine_tune_last = true;
  double alpha = 0.1;  // theta = alpha * theta_hat + identity
  nn::CorrelationMode correlation_mode = nn::CorrelationMode::pearson;

  int feature_dim() const { return backbone_feature_dim(backbone); }
  bool operator==(const NetworkConfig&) const = default;
};

// Standard deviation of the regression head's final layer initialization;
// together with alpha this keeps early estimates near the identity.
inline constexpr double kHeadFinalInitStd = 1e-3;

// HWC image -> [1, C, H, W] float tensor.
nn::Tensorf image_to_tensor(const GridImage& img);
// Stacks C-channel images of equal shape into [N, C, H, W].
nn::Tensorf stack_images(const std::vector<const GridImage*>& imgs);

struct RegisterTiming {
  double prepare_seconds = 0.0;  // resize + standardization
  double network_seconds = 0.0;  // feature extraction through regression
  double total() const { return prepare_seconds + network_seconds; }
};

struct RegisterResult {
  AffineParams theta;
  RegisterTiming timing;
};

// Everything one training step's forward pass produces; backward() consumes
// it together with the layer-internal caches, so forward/backward calls must
// be paired per batch.
struct ModelForward {
  nn::Tensorf feat_moving;  // [N, d, 14, 14], L2-normalized fibers
  nn::Tensorf feat_fixed;
  nn::CorrelationCache<float> corr_cache;
  nn::Tensorf corr_raw;   // [N, 196, 14, 14]
  nn::Tensorf corr_norm;  // ReLU + fiber-normalized
  nn::Tensorf theta_hat;  // [N, 6]
  nn::Tensorf theta;      // [N, 6], anchored
};

// The registration network: two modality-specific feature extractors
// (independent weights, initialized as clones), the pairwise-correlation
// layer, and a small convolutional regression head that emits the 6
// identity-anchored affine parameters.
class RegistrationModel {
 public:
  RegistrationModel(const NetworkConfig& cfg, std::uint64_t init_seed);

  const NetworkConfig& config() const { return cfg_; }
  std::uint64_t init_seed() const { return init_seed_; }

  nn::Sequential<float>& branch(Branch b) {
    return b == Branch::moving ? moving_branch_ : fixed_branch_;
  }
  const nn::Sequential<float>& branch(Branch b) const {
    return b == Branch::moving ? moving_branch_ : fixed_branch_;
  }
  nn::Sequential<float>& head() { return head_; }
  const nn::Sequential<float>& head() const { return head_; }

  // Backbone features for standardized 224x224x3 inputs [N,3,224,224].
  nn::Tensorf extract_features(const nn::Tensorf& input, Branch b, bool training = false) const;

  // Correlation + regression from feature maps (bypasses the backbones;
  // used with cached features when they are frozen).
  ModelForward forward_from_features(nn::Tensorf feat_moving, nn::Tensorf feat_fixed,
                                     bool training) const;

  ModelForward forward(const nn::Tensorf& moving_in, const nn::Tensorf& fixed_in,
                       bool training) const;

  // Backpropagates d(total loss)/d(theta) plus optional extra feature
  // gradients (the MMD term). Parameter gradients accumulate in the layers;
  // feature gradients reach the branches only when they hold trainable
  // layers. backprop_into_backbone=false stops at the correlation layer
  // (cached frozen features).
  void backward(ModelForward& fwd, const nn::Tensorf& d_theta,
                const nn::Tensorf* d_feat_moving_extra, const nn::Tensorf* d_feat_fixed_extra,
                bool backprop_into_backbone = true);

  // Trainable parameter references (head + optionally last backbone convs).
  std::vector<nn::ParamRef<float>> trainable_params();
  // Every weight/buffer for serialization.
  std::vector<nn::NamedTensor<float>> state_tensors();

  std::size_t trainable_count();

  // Full single-pair inference: prepare -> features -> correlate -> regress.
  // Eval mode, no caches touched; safe for concurrent calls on a const
  // model. Wall-clock timings are recorded separately for the preparation
  // and network stages.
  RegisterResult register_pair(const RegistrationPair& pair) const;

  static nn::Tensorf anchor_batch(const nn::Tensorf& theta_hat, double alpha);

 private:
  NetworkConfig cfg_;
  std::uint64_t init_seed_;
  nn::Sequential<float> moving_branch_;
  nn::Sequential<float> fixed_branch_;
  nn::Sequential<float> head_;
};

}  // namespace mmreg
