#pragma once

#include <array>

#include "mmreg/image.hpp"
#include "mmreg/manifest.hpp"

namespace mmreg {

// Network input geometry and the backbone's published channel statistics.
inline constexpr int kNetInputSize = 224;
inline constexpr std::array<float, 3> kChannelMean = {0.485f, 0.456f, 0.406f};
inline constexpr std::array<float, 3> kChannelStd = {0.229f, 0.224f, 0.225f};

// Pixel-exact crop of the half-open box [x0,x1) x [y0,y1); spacing is
// inherited from the parent. Throws BoxOutOfRange when the box leaves the
// image.
GridImage extract_segment(const GridImage& full_fixed, const BoxRoi& box);
BinaryMask extract_segment_mask(const BinaryMask& full_mask, const BoxRoi& box);

// Direct (non-letterboxed) bilinear resize via the identity warp on the
// target grid. Nearest-neighbor variant for masks.
GridImage resize_bilinear(const GridImage& img, int out_height, int out_width);
BinaryMask resize_nearest(const BinaryMask& mask, int out_height, int out_width);

// Produces the 224x224x3 standardized tensor-image the feature extractors
// consume: bilinear resize, channel replication for single-channel inputs,
// then per-channel (v - mean) / std. Re-applying to an already standardized
// image is an error (guarded by GridImage::standardized).
GridImage prepare_network_input(const GridImage& img);

}  // namespace mmreg
