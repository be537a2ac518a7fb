#include "mmreg/image.hpp"

#include <cmath>

#include "mmreg/error.hpp"

namespace mmreg {

std::string to_string(Modality m) {
  switch (m) {
    case Modality::xray: return "xray";
    case Modality::histology: return "histology";
    case Modality::synthetic: return "synthetic";
  }
  return "synthetic";
}

Modality modality_from_string(const std::string& s) {
  if (s == "xray") return Modality::xray;
  if (s == "histology") return Modality::histology;
  if (s == "synthetic") return Modality::synthetic;
  throw DataError("unknown modality: '" + s + "'");
}

void GridImage::validate(const std::string& what) const {
  if (height <= 0 || width <= 0 || (channels != 1 && channels != 3)) {
    throw DataError(what + ": invalid image shape " + std::to_string(height) + "x" +
                    std::to_string(width) + "x" + std::to_string(channels));
  }
  if (pixels.size() != static_cast<std::size_t>(height) * width * channels) {
    throw DataError(what + ": pixel buffer size does not match shape");
  }
  if (!(spacing_mm.x > 0.0) || !(spacing_mm.y > 0.0)) {
    throw DataError(what + ": pixel spacing must be strictly positive");
  }
  for (float v : pixels) {
    if (!std::isfinite(v)) throw DataError(what + ": non-finite intensity");
    if (!standardized && (v < 0.0f || v > 1.0f)) {
      throw DataError(what + ": intensity outside [0, 1] in non-standardized image");
    }
  }
}

std::size_t BinaryMask::area() const {
  std::size_t n = 0;
  for (std::uint8_t v : pixels) n += v;
  return n;
}

void BinaryMask::validate(const std::string& what) const {
  if (height <= 0 || width <= 0) throw DataError(what + ": invalid mask shape");
  if (pixels.size() != static_cast<std::size_t>(height) * width) {
    throw DataError(what + ": mask buffer size does not match shape");
  }
  for (std::uint8_t v : pixels) {
    if (v != 0 && v != 1) throw DataError(what + ": mask values must be exactly 0 or 1");
  }
}

namespace {

inline float sample_bilinear(const GridImage& img, double sx, double sy, int c) {
  const double fx = std::floor(sx);
  const double fy = std::floor(sy);
  const int x0 = static_cast<int>(fx);
  const int y0 = static_cast<int>(fy);
  const double ax = sx - fx;
  const double ay = sy - fy;
  double acc = 0.0;
  const double w00 = (1.0 - ax) * (1.0 - ay);
  const double w01 = ax * (1.0 - ay);
  const double w10 = (1.0 - ax) * ay;
  const double w11 = ax * ay;
  const bool in_x0 = x0 >= 0 && x0 < img.width;
  const bool in_x1 = x0 + 1 >= 0 && x0 + 1 < img.width;
  const bool in_y0 = y0 >= 0 && y0 < img.height;
  const bool in_y1 = y0 + 1 >= 0 && y0 + 1 < img.height;
  if (w00 != 0.0 && in_x0 && in_y0) acc += w00 * img.at(y0, x0, c);
  if (w01 != 0.0 && in_x1 && in_y0) acc += w01 * img.at(y0, x0 + 1, c);
  if (w10 != 0.0 && in_x0 && in_y1) acc += w10 * img.at(y0 + 1, x0, c);
  if (w11 != 0.0 && in_x1 && in_y1) acc += w11 * img.at(y0 + 1, x0 + 1, c);
  return static_cast<float>(acc);
}

}  // namespace

GridImage warp_image(const GridImage& moving, const AffineParams& t, int out_height,
                     int out_width, Interp interp) {
  if (!t.finite()) throw NumericError("warp_image: non-finite transform");
  if (out_height < 2 || out_width < 2) {
    throw DataError("warp_image: output shape must be at least 2x2");
  }
  if (moving.empty()) throw DataError("warp_image: empty moving image");

  GridImage out(out_height, out_width, moving.channels);
  out.spacing_mm = moving.spacing_mm;
  out.modality = moving.modality;
  out.standardized = moving.standardized;

  const int mc = moving.channels;
  for (int y = 0; y < out_height; ++y) {
    const double ny = 2.0 * y / (out_height - 1) - 1.0;
    for (int x = 0; x < out_width; ++x) {
      const double nx = 2.0 * x / (out_width - 1) - 1.0;
      const Vec2 m = t({nx, ny});
      const double sx = (m.x + 1.0) * 0.5 * (moving.width - 1);
      const double sy = (m.y + 1.0) * 0.5 * (moving.height - 1);
      if (interp == Interp::nearest) {
        const long long ix = std::llround(sx);
        const long long iy = std::llround(sy);
        if (ix >= 0 && ix < moving.width && iy >= 0 && iy < moving.height) {
          for (int c = 0; c < mc; ++c) {
            out.at(y, x, c) = moving.at(static_cast<int>(iy), static_cast<int>(ix), c);
          }
        }
      } else {
        for (int c = 0; c < mc; ++c) out.at(y, x, c) = sample_bilinear(moving, sx, sy, c);
      }
    }
  }
  return out;
}

BinaryMask warp_mask(const BinaryMask& moving, const AffineParams& t, int out_height,
                     int out_width) {
  if (!t.finite()) throw NumericError("warp_mask: non-finite transform");
  if (out_height < 2 || out_width < 2) {
    throw DataError("warp_mask: output shape must be at least 2x2");
  }
  BinaryMask out(out_height, out_width);
  out.spacing_mm = moving.spacing_mm;
  for (int y = 0; y < out_height; ++y) {
    const double ny = 2.0 * y / (out_height - 1) - 1.0;
    for (int x = 0; x < out_width; ++x) {
      const double nx = 2.0 * x / (out_width - 1) - 1.0;
      const Vec2 m = t({nx, ny});
      const double sx = (m.x + 1.0) * 0.5 * (moving.width - 1);
      const double sy = (m.y + 1.0) * 0.5 * (moving.height - 1);
      const long long ix = std::llround(sx);
      const long long iy = std::llround(sy);
      if (ix >= 0 && ix < moving.width && iy >= 0 && iy < moving.height) {
        out.at(y, x) = moving.at(static_cast<int>(iy), static_cast<int>(ix));
      }
    }
  }
  return out;
}

}  // namespace mmreg
