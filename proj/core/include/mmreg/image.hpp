#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmreg/affine.hpp"

namespace mmreg {

enum class Modality { xray, histology, synthetic };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

// 2-D raster, the unit of registration. Pixels are row-major H x W x C
// interleaved floats. Ingestion normalizes intensities to [0, 1];
// prepare_network_input() later standardizes channels and sets
// `standardized`, after which values leave [0, 1] on purpose.
struct GridImage {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<float> pixels;
  Vec2 spacing_mm{1.0, 1.0};  // (mm per pixel in x, mm per pixel in y)
  Modality modality = Modality::synthetic;
  bool standardized = false;

  GridImage() = default;
  GridImage(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c),
        pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  std::size_t size() const { return pixels.size(); }
  bool empty() const { return pixels.empty(); }

  float& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  // Checks the ingestion invariants: finite values in [0, 1] (skipped when
  // standardized), positive spacing, consistent buffer size.
  void validate(const std::string& what) const;
};

// Binary tissue mask companion to a GridImage; values are exactly 0 or 1.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;
  Vec2 spacing_mm{1.0, 1.0};

  BinaryMask() = default;
  BinaryMask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

  bool empty() const { return pixels.empty(); }
  std::uint8_t& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

  std::size_t area() const;
  void validate(const std::string& what) const;
};

// Named landmark points in pixel coordinates of the owning image. Paired
// sets (fixed/moving) correspond through equal ids.
struct LandmarkSet {
  std::vector<std::string> ids;
  std::vector<Vec2> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

enum class Interp { bilinear, nearest };

// Backward warp: for every output grid location x (normalized coordinates of
// out_shape), output(x) = moving(t(x)). Out-of-bounds samples fill with 0.
// Masks and other discrete rasters must use Interp::nearest.
GridImage warp_image(const GridImage& moving, const AffineParams& t, int out_height,
                     int out_width, Interp interp);

BinaryMask warp_mask(const BinaryMask& moving, const AffineParams& t, int out_height,
                     int out_width);

}  // namespace mmreg
