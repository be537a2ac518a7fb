#include "mmreg/backbone.hpp"

#include <memory>

#include "mmreg/error.hpp"

namespace mmreg {

std::string to_string(BackboneKind k) {
  switch (k) {
    case BackboneKind::vgg16_block4: return "vgg16_block4";
    case BackboneKind::resnet101_stage: return "resnet101_stage";
    case BackboneKind::radresnet50_stage: return "radresnet50_stage";
  }
  return "vgg16_block4";
}

BackboneKind backbone_from_string(const std::string& s) {
  if (s == "vgg16_block4") return BackboneKind::vgg16_block4;
  if (s == "resnet101_stage") return BackboneKind::resnet101_stage;
  if (s == "radresnet50_stage") return BackboneKind::radresnet50_stage;
  throw ConfigError("unknown backbone '" + s +
                    "' (expected vgg16_block4, resnet101_stage or radresnet50_stage)");
}

int backbone_feature_dim(BackboneKind k) {
  return k == BackboneKind::vgg16_block4 ? 512 : 1024;
}

namespace {

using nn::BatchNorm2d;
using nn::Bottleneck;
using nn::Conv2d;
using nn::FeatureL2Norm;
using nn::MaxPool2d;
using nn::ReLU;
using nn::Sequential;

void add_vgg_conv(Sequential<float>& net, int in_ch, int out_ch, Rng& rng) {
  auto conv = std::make_unique<Conv2d<float>>(in_ch, out_ch, 3, 1, 1);
  conv->init_he(rng);
  net.add(std::move(conv));
  net.add(std::make_unique<ReLU<float>>());
}

Sequential<float> make_vgg16_block4(bool fine_tune_last, Rng& rng) {
  Sequential<float> net;
  add_vgg_conv(net, 3, 64, rng);
  add_vgg_conv(net, 64, 64, rng);
  net.add(std::make_unique<MaxPool2d<float>>(2, 2));
  add_vgg_conv(net, 64, 128, rng);
  add_vgg_conv(net, 128, 128, rng);
  net.add(std::make_unique<MaxPool2d<float>>(2, 2));
  add_vgg_conv(net, 128, 256, rng);
  add_vgg_conv(net, 256, 256, rng);
  add_vgg_conv(net, 256, 256, rng);
  net.add(std::make_unique<MaxPool2d<float>>(2, 2));
  add_vgg_conv(net, 256, 512, rng);
  add_vgg_conv(net, 512, 512, rng);
  const std::size_t last_conv = net.size();
  add_vgg_conv(net, 512, 512, rng);
  net.add(std::make_unique<MaxPool2d<float>>(2, 2));
  net.add(std::make_unique<FeatureL2Norm<float>>());
  if (fine_tune_last) net.layer(last_conv).trainable = true;
  return net;
}

Sequential<float> make_resnet_stage3(int layer3_blocks, bool fine_tune_last, Rng& rng) {
  Sequential<float> net;
  auto stem = std::make_unique<Conv2d<float>>(3, 64, 7, 2, 3, false);
  stem->init_he(rng);
  net.add(std::move(stem));
  net.add(std::make_unique<BatchNorm2d<float>>(64));
  net.add(std::make_unique<ReLU<float>>());
  net.add(std::make_unique<MaxPool2d<float>>(3, 2, 1));

  auto add_stage = [&](int blocks, int in_ch, int mid_ch, int out_ch, int stride) {
    net.add(std::make_unique<Bottleneck<float>>(in_ch, mid_ch, out_ch, stride, rng));
    for (int i = 1; i < blocks; ++i) {
      net.add(std::make_unique<Bottleneck<float>>(out_ch, mid_ch, out_ch, 1, rng));
    }
  };
  add_stage(3, 64, 64, 256, 1);
  add_stage(4, 256, 128, 512, 2);
  add_stage(layer3_blocks, 512, 256, 1024, 2);
  const std::size_t last_block = net.size() - 1;
  net.add(std::make_unique<FeatureL2Norm<float>>());
  if (fine_tune_last) {
    static_cast<Bottleneck<float>&>(net.layer(last_block)).set_last_conv_trainable(true);
  }
  return net;
}

}  // namespace

nn::Sequential<float> make_backbone(BackboneKind kind, bool fine_tune_last, Rng& rng) {
  switch (kind) {
    case BackboneKind::vgg16_block4: return make_vgg16_block4(fine_tune_last, rng);
    case BackboneKind::resnet101_stage: return make_resnet_stage3(23, fine_tune_last, rng);
    case BackboneKind::radresnet50_stage: return make_resnet_stage3(6, fine_tune_last, rng);
  }
  throw ConfigError("make_backbone: unknown backbone kind");
}

}  // namespace mmreg
