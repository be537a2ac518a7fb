#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mmreg/rng.hpp"
#include "mmreg/tensor.hpp"

namespace mmreg::nn {

// Normalization guard shared by every epsilon-guarded denominator.
inline constexpr double kNormEps = 1e-8;

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T>* tensor;
};

// Caffe-style layer: forward stores what backward needs only when called
// with training=true, so eval-mode forward is const and safe to run
// concurrently on a shared trained model.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor<T> forward(const Tensor<T>& x, bool training) const = 0;

  // Consumes the cache left by the last training-mode forward. Accumulates
  // parameter gradients; returns the input gradient when requested.
  virtual Tensor<T> backward(const Tensor<T>& grad_out, bool need_grad_input) = 0;

  virtual std::string kind() const = 0;

  // Trainable parameters (value + gradient) for the optimizer.
  virtual void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    (void)prefix;
    (void)out;
  }
  // All persistent tensors (weights and buffers) for serialization.
  virtual void collect_state(const std::string& prefix, std::vector<NamedTensor<T>>& out) {
    (void)prefix;
    (void)out;
  }

  bool has_trainable() const { return trainable; }
  bool trainable = false;
};

template <typename T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(int in_ch, int out_ch, int ksize, int stride = 1, int pad = 0, bool with_bias = true);

  void init_he(Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, bool training) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool need_grad_input) override;
  std::string kind() const override { return "conv2d"; }
  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  void collect_state(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;

  int out_size(int in_size) const { return (in_size + 2 * pad_ - ksize_) / stride_ + 1; }

  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }

  Tensor<T> weight;  // [out_ch, in_ch * k * k]
  Tensor<T> bias;    // [out_ch]
  Tensor<T> grad_weight;
  Tensor<T> grad_bias;

 private:
  int in_ch_, out_ch_, ksize_, stride_, pad_;
  bool with_bias_;
  mutable Tensor<T> cached_input_;
};

template <typename T>
class BatchNorm2d : public Layer<T> {
 public:
  explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5);

  Tensor<T> forward(const Tensor<T>& x, bool training) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool need_grad_input) override;
  std::string kind() const override { return "batchnorm2d"; }
  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  void collect_state(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;

  Tensor<T> weight;  // gamma [C]
  Tensor<T> bias;    // beta [C]
  // Updated by training-mode forward (which owns the model exclusively);
  // eval-mode forward only reads them.
  mutable Tensor<T> running_mean;  // [C]
  mutable Tensor<T> running_var;   // [C]
  Tensor<T> grad_weight;
  Tensor<T> grad_bias;

 private:
  int channels_;
  double momentum_, eps_;
  // batch statistics saved by training-mode forward
  mutable Tensor<T> cached_xhat_;
  mutable std::vector<T> cached_invstd_;
  mutable bool cached_training_mode_ = false;
  mutable Tensor<T> cached_input_;  // eval-mode backward only needs shape info
};

template <typename T>
class ReLU : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool training) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool need_grad_input) override;
  std::string kind() const override { return "relu"; }

 private:
  mutable Tensor<T> cached_output_;
};

template <typename T>
class MaxPool2d : public Layer<T> {
 public:
  MaxPool2d(int ksize, int stride, int pad = 0);

  Tensor<T> forward(const Tensor<T>& x, bool training) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool need_grad_input) override;
  std::string kind() const override { return "maxpool2d"; }

 private:
  int ksize_, stride_, pad_;
  mutable Tensor<int> cached_argmax_;  // flat input index per output element
  mutable std::vector<int> cached_in_shape_;
};

template <typename T>
class Linear : public Layer<T> {
 public:
  Linear(int in_features, int out_features);

  void init_normal(Rng& rng, double stddev);

  Tensor<T> forward(const Tensor<T>& x, bool training) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool need_grad_input) override;
  std::string kind() const override { return "linear"; }
  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  void collect_state(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;

  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out]
  Tensor<T> grad_weight;
  Tensor<T> grad_bias;

 private:
  int in_features_, out_features_;
  mutable Tensor<T> cached_input_;
};

template <typename T>
class Flatten : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool training) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool need_grad_input) override;
  std::string kind() const override { return "flatten"; }

 private:
  mutable std::vector<int> cached_in_shape_;
};

// L2 normalization of each spatial location's channel fiber:
// y(n,:,h,w) = x(n,:,h,w) / max(||x(n,:,h,w)||_2, eps). Zero fibers stay
// zero instead of producing NaN.
template <typename T>
class FeatureL2Norm : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool training) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool need_grad_input) override;
  std::string kind() const override { return "feature_l2norm"; }

 private:
  mutable Tensor<T> cached_output_;
  mutable std::vector<T> cached_norm_;
};

// ResNet bottleneck (1x1 -> 3x3 -> 1x1 with BN/ReLU and a skip connection).
// Backward supports only the fine-tune-last case: gradients reach the final
// 1x1 convolution's weights and stop (need_grad_input must be false).
template <typename T>
class Bottleneck : public Layer<T> {
 public:
  Bottleneck(int in_ch, int mid_ch, int out_ch, int stride, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, bool training) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool need_grad_input) override;
  std::string kind() const override { return "bottleneck"; }
  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  void collect_state(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;

  void set_last_conv_trainable(bool v);

 private:
  std::unique_ptr<Conv2d<T>> conv1_, conv2_, conv3_, down_conv_;
  std::unique_ptr<BatchNorm2d<T>> bn1_, bn2_, bn3_, down_bn_;
  mutable Tensor<T> cached_conv3_in_;
  mutable Tensor<T> cached_sum_;
  mutable std::vector<T> cached_bn3_scale_;
};

// Layer pipeline. Training-mode forward stores caches only from the deepest
// layer owning trainable parameters onward; backward walks back down to that
// layer (or all the way through when need_input_grad is set, which requires
// every layer to be trainable-reachable, as in the regression head).
template <typename T>
class Sequential {
 public:
  Sequential() = default;

  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  void add(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }
  std::size_t size() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_[i]; }
  const Layer<T>& layer(std::size_t i) const { return *layers_[i]; }

  Tensor<T> forward(const Tensor<T>& x, bool training) const;

  // Runs layers [begin, end) only. Lets callers precompute the frozen prefix
  // once and re-run just the trainable tail per step.
  Tensor<T> forward_range(const Tensor<T>& x, std::size_t begin, std::size_t end,
                          bool training) const;

  Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad = false);

  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out);
  void collect_state(const std::string& prefix, std::vector<NamedTensor<T>>& out);

  // Index of the deepest layer with trainable parameters, or size() if none.
  std::size_t first_trainable_index() const;

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

// Adam with bias correction and optional global-norm gradient clipping.
template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<ParamRef<T>> params, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void zero_grad();
  // Returns the pre-clip global gradient norm.
  double step(double clip_norm = 0.0);

 private:
  std::vector<ParamRef<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long step_count_ = 0;
};

}  // namespace mmreg::nn
