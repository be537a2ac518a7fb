#include "mmreg/preprocess.hpp"

#include <string>

#include "mmreg/error.hpp"

namespace mmreg {

GridImage extract_segment(const GridImage& full_fixed, const BoxRoi& box) {
  if (box.x0 < 0 || box.y0 < 0 || box.x1 > full_fixed.width || box.y1 > full_fixed.height ||
      box.x0 >= box.x1 || box.y0 >= box.y1) {
    throw BoxOutOfRange("extract_segment: box (" + std::to_string(box.x0) + "," +
                        std::to_string(box.y0) + "," + std::to_string(box.x1) + "," +
                        std::to_string(box.y1) + ") outside image " +
                        std::to_string(full_fixed.width) + "x" +
                        std::to_string(full_fixed.height));
  }
  GridImage out(box.y1 - box.y0, box.x1 - box.x0, full_fixed.channels);
  out.spacing_mm = full_fixed.spacing_mm;
  out.modality = full_fixed.modality;
  out.standardized = full_fixed.standardized;
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int c = 0; c < out.channels; ++c) {
        out.at(y, x, c) = full_fixed.at(box.y0 + y, box.x0 + x, c);
      }
    }
  }
  return out;
}

BinaryMask extract_segment_mask(const BinaryMask& full_mask, const BoxRoi& box) {
  if (box.x0 < 0 || box.y0 < 0 || box.x1 > full_mask.width || box.y1 > full_mask.height ||
      box.x0 >= box.x1 || box.y0 >= box.y1) {
    throw BoxOutOfRange("extract_segment_mask: box outside mask bounds");
  }
  BinaryMask out(box.y1 - box.y0, box.x1 - box.x0);
  out.spacing_mm = full_mask.spacing_mm;
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) out.at(y, x) = full_mask.at(box.y0 + y, box.x0 + x);
  }
  return out;
}

GridImage resize_bilinear(const GridImage& img, int out_height, int out_width) {
  if (img.height == out_height && img.width == out_width) return img;
  GridImage out = warp_image(img, identity_params(), out_height, out_width, Interp::bilinear);
  // The resize changes the physical extent covered per pixel.
  out.spacing_mm = {img.spacing_mm.x * (img.width - 1) / (out_width - 1),
                    img.spacing_mm.y * (img.height - 1) / (out_height - 1)};
  return out;
}

BinaryMask resize_nearest(const BinaryMask& mask, int out_height, int out_width) {
  if (mask.height == out_height && mask.width == out_width) return mask;
  BinaryMask out = warp_mask(mask, identity_params(), out_height, out_width);
  out.spacing_mm = {mask.spacing_mm.x * (mask.width - 1) / (out_width - 1),
                    mask.spacing_mm.y * (mask.height - 1) / (out_height - 1)};
  return out;
}

GridImage prepare_network_input(const GridImage& img) {
  if (img.empty()) throw DataError("prepare_network_input: empty image");
  if (img.standardized) {
    throw DataError("prepare_network_input: input is already standardized");
  }
  GridImage resized = img.height == kNetInputSize && img.width == kNetInputSize
                          ? img
                          : resize_bilinear(img, kNetInputSize, kNetInputSize);
  GridImage out(kNetInputSize, kNetInputSize, 3);
  out.spacing_mm = resized.spacing_mm;
  out.modality = img.modality;
  out.standardized = true;
  for (int y = 0; y < kNetInputSize; ++y) {
    for (int x = 0; x < kNetInputSize; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = img.channels == 3 ? resized.at(y, x, c) : resized.at(y, x, 0);
        out.at(y, x, c) = (v - kChannelMean[c]) / kChannelStd[c];
      }
    }
  }
  return out;
}

}  // namespace mmreg
