#include "mmreg/model.hpp"

#include <chrono>

#include "mmreg/error.hpp"
#include "mmreg/preprocess.hpp"

namespace mmreg {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

nn::Sequential<float> make_head(int corr_channels, Rng& rng) {
  using namespace nn;
  Sequential<float> head;
  auto conv1 = std::make_unique<Conv2d<float>>(corr_channels, 128, 7, 1, 0);
  conv1->init_he(rng);
  conv1->trainable = true;
  head.add(std::move(conv1));
  auto bn1 = std::make_unique<BatchNorm2d<float>>(128);
  bn1->trainable = true;
  head.add(std::move(bn1));
  head.add(std::make_unique<ReLU<float>>());
  auto conv2 = std::make_unique<Conv2d<float>>(128, 64, 5, 1, 0);
  conv2->init_he(rng);
  conv2->trainable = true;
  head.add(std::move(conv2));
  auto bn2 = std::make_unique<BatchNorm2d<float>>(64);
  bn2->trainable = true;
  head.add(std::move(bn2));
  head.add(std::make_unique<ReLU<float>>());
  head.add(std::make_unique<Flatten<float>>());
  auto fc = std::make_unique<Linear<float>>(64 * 4 * 4, 6);
  fc->init_normal(rng, kHeadFinalInitStd);
  fc->trainable = true;
  head.add(std::move(fc));
  return head;
}

}  // namespace

nn::Tensorf image_to_tensor(const GridImage& img) {
  nn::Tensorf t({1, img.channels, img.height, img.width});
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) t(0, c, y, x) = img.at(y, x, c);
    }
  }
  return t;
}

nn::Tensorf stack_images(const std::vector<const GridImage*>& imgs) {
  if (imgs.empty()) throw NumericError("stack_images: empty batch");
  const GridImage& first = *imgs[0];
  nn::Tensorf t({static_cast<int>(imgs.size()), first.channels, first.height, first.width});
  for (std::size_t n = 0; n < imgs.size(); ++n) {
    const GridImage& img = *imgs[n];
    if (img.height != first.height || img.width != first.width ||
        img.channels != first.channels) {
      throw NumericError("stack_images: inconsistent shapes in batch");
    }
    for (int c = 0; c < img.channels; ++c) {
      for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
          t(static_cast<int>(n), c, y, x) = img.at(y, x, c);
        }
      }
    }
  }
  return t;
}

RegistrationModel::RegistrationModel(const NetworkConfig& cfg, std::uint64_t init_seed)
    : cfg_(cfg), init_seed_(init_seed) {
  // Both branches start from identical weights (clones): same substream.
  Rng rng_m(mix_seed(init_seed, stable_hash("backbone")));
  Rng rng_f(mix_seed(init_seed, stable_hash("backbone")));
  moving_branch_ = make_backbone(cfg.backbone, cfg.fine_tune_last, rng_m);
  fixed_branch_ = make_backbone(cfg.backbone, cfg.fine_tune_last, rng_f);
  Rng rng_h(mix_seed(init_seed, stable_hash("head")));
  head_ = make_head(kFeatureGrid * kFeatureGrid, rng_h);
}

nn::Tensorf RegistrationModel::extract_features(const nn::Tensorf& input, Branch b,
                                                bool training) const {
  if (input.ndim() != 4 || input.dim(1) != 3 || input.dim(2) != kNetInputSize ||
      input.dim(3) != kNetInputSize) {
    throw NumericError("extract_features: expected [N,3,224,224] standardized input, got " +
                       nn::shape_string(input));
  }
  return branch(b).forward(input, training);
}

nn::Tensorf RegistrationModel::anchor_batch(const nn::Tensorf& theta_hat, double alpha) {
  static constexpr double kIdentity[6] = {1.0, 0.0, 0.0, 0.0, 1.0, 0.0};
  nn::Tensorf theta({theta_hat.dim(0), 6});
  for (int i = 0; i < theta_hat.dim(0); ++i) {
    for (int k = 0; k < 6; ++k) {
      theta(i, k) = static_cast<float>(alpha * theta_hat(i, k) + kIdentity[k]);
    }
  }
  return theta;
}

ModelForward RegistrationModel::forward_from_features(nn::Tensorf feat_moving,
                                                      nn::Tensorf feat_fixed,
                                                      bool training) const {
  ModelForward fwd;
  fwd.corr_raw = nn::correlate(feat_moving, feat_fixed, cfg_.correlation_mode, &fwd.corr_cache);
  fwd.corr_norm = nn::normalize_correlation(fwd.corr_raw);
  fwd.theta_hat = head_.forward(fwd.corr_norm, training);
  fwd.theta = anchor_batch(fwd.theta_hat, cfg_.alpha);
  fwd.feat_moving = std::move(feat_moving);
  fwd.feat_fixed = std::move(feat_fixed);
  return fwd;
}

ModelForward RegistrationModel::forward(const nn::Tensorf& moving_in, const nn::Tensorf& fixed_in,
                                        bool training) const {
  nn::Tensorf fm = extract_features(moving_in, Branch::moving, training);
  nn::Tensorf ff = extract_features(fixed_in, Branch::fixed, training);
  return forward_from_features(std::move(fm), std::move(ff), training);
}

void RegistrationModel::backward(ModelForward& fwd, const nn::Tensorf& d_theta,
                                 const nn::Tensorf* d_feat_moving_extra,
                                 const nn::Tensorf* d_feat_fixed_extra,
                                 bool backprop_into_backbone) {
  nn::Tensorf d_theta_hat({d_theta.dim(0), 6});
  for (std::size_t i = 0; i < d_theta_hat.size(); ++i) {
    d_theta_hat[i] = static_cast<float>(cfg_.alpha * d_theta[i]);
  }
  nn::Tensorf d_corr_norm = head_.backward(d_theta_hat, /*need_input_grad=*/true);
  d_corr_norm.reshape(fwd.corr_norm.shape());
  nn::Tensorf d_corr_raw = nn::normalize_correlation_backward(fwd.corr_raw, d_corr_norm);

  nn::Tensorf d_feat_m(fwd.feat_moving.shape());
  nn::Tensorf d_feat_f(fwd.feat_fixed.shape());
  nn::correlate_backward(fwd.corr_cache, d_corr_raw, d_feat_m, d_feat_f);
  if (d_feat_moving_extra) {
    for (std::size_t i = 0; i < d_feat_m.size(); ++i) d_feat_m[i] += (*d_feat_moving_extra)[i];
  }
  if (d_feat_fixed_extra) {
    for (std::size_t i = 0; i < d_feat_f.size(); ++i) d_feat_f[i] += (*d_feat_fixed_extra)[i];
  }
  if (backprop_into_backbone &&
      moving_branch_.first_trainable_index() != moving_branch_.size()) {
    moving_branch_.backward(d_feat_m, /*need_input_grad=*/false);
    fixed_branch_.backward(d_feat_f, /*need_input_grad=*/false);
  }
}

std::vector<nn::ParamRef<float>> RegistrationModel::trainable_params() {
  std::vector<nn::ParamRef<float>> out;
  moving_branch_.collect_params("moving_branch", out);
  fixed_branch_.collect_params("fixed_branch", out);
  head_.collect_params("head", out);
  return out;
}

std::vector<nn::NamedTensor<float>> RegistrationModel::state_tensors() {
  std::vector<nn::NamedTensor<float>> out;
  moving_branch_.collect_state("moving_branch", out);
  fixed_branch_.collect_state("fixed_branch", out);
  head_.collect_state("head", out);
  return out;
}

std::size_t RegistrationModel::trainable_count() {
  std::size_t n = 0;
  for (const auto& p : trainable_params()) n += p.value->size();
  return n;
}

RegisterResult RegistrationModel::register_pair(const RegistrationPair& pair) const {
  if (pair.fixed.empty() || pair.moving.empty()) {
    throw DataError("register_pair: empty image in pair '" + pair.meta.pair_id + "'");
  }
  RegisterResult res;
  auto t0 = Clock::now();
  const GridImage fixed_in = prepare_network_input(pair.fixed);
  const GridImage moving_in = prepare_network_input(pair.moving);
  const nn::Tensorf fixed_t = image_to_tensor(fixed_in);
  const nn::Tensorf moving_t = image_to_tensor(moving_in);
  res.timing.prepare_seconds = seconds_since(t0);

  auto t1 = Clock::now();
  nn::Tensorf fm = extract_features(moving_t, Branch::moving, false);
  nn::Tensorf ff = extract_features(fixed_t, Branch::fixed, false);
  ModelForward fwd = forward_from_features(std::move(fm), std::move(ff), false);
  res.timing.network_seconds = seconds_since(t1);

  for (int k = 0; k < 6; ++k) res.theta.theta[k] = fwd.theta(0, k);
  return res;
}

}  // namespace mmreg
