#pragma once

#include <string>

#include "mmreg/layers.hpp"
#include "mmreg/rng.hpp"

namespace mmreg {

// Feature extraction trunks, cropped where they emit a 14x14 grid at
// 224x224 input: VGG-16 after its fourth pooling stage (d=512), or a
// ResNet trunk after its third stage (d=1024). radresnet50_stage shares the
// ResNet-50 topology and exists as a separate tag for ablation bookkeeping
// (its reference weights come from a radiology corpus rather than ImageNet).
enum class BackboneKind { vgg16_block4, resnet101_stage, radresnet50_stage };

std::string to_string(BackboneKind k);
BackboneKind backbone_from_string(const std::string& s);

// Channel count d of the emitted feature fibers.
int backbone_feature_dim(BackboneKind k);

// Spatial grid side of the emitted feature map (14 for every trunk here).
inline constexpr int kFeatureGrid = 14;

// Builds the trunk including the trailing per-location L2 normalization.
// When fine_tune_last is set, the final convolution is trainable and
// everything below it stays frozen. Weights are He-initialized from rng;
// checkpoints restore exact trained weights afterwards.
nn::Sequential<float> make_backbone(BackboneKind kind, bool fine_tune_last, Rng& rng);

}  // namespace mmreg
