#include <algorithm>
#include <cmath>
#include <map>

#include "mmreg/error.hpp"
#include "mmreg/evaluate.hpp"
#include "mmreg/image_io.hpp"

namespace mmreg {

namespace {

struct Rgb {
  float r, g, b;
};

constexpr Rgb kFixedLmColor{0.1f, 0.9f, 0.1f};
constexpr Rgb kMappedLmColor{0.95f, 0.15f, 0.1f};
constexpr Rgb kSegmentColor{0.95f, 0.9f, 0.1f};

void put_pixel(GridImage& img, int x, int y, Rgb c) {
  if (x < 0 || x >= img.width || y < 0 || y >= img.height) return;
  img.at(y, x, 0) = c.r;
  img.at(y, x, 1) = c.g;
  img.at(y, x, 2) = c.b;
}

void draw_disc(GridImage& img, Vec2 p, int radius, Rgb c) {
  const int cx = static_cast<int>(std::lround(p.x));
  const int cy = static_cast<int>(std::lround(p.y));
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dx * dx + dy * dy <= radius * radius) put_pixel(img, cx + dx, cy + dy, c);
    }
  }
}

void draw_segment(GridImage& img, Vec2 a, Vec2 b, Rgb c) {
  int x0 = static_cast<int>(std::lround(a.x)), y0 = static_cast<int>(std::lround(a.y));
  const int x1 = static_cast<int>(std::lround(b.x)), y1 = static_cast<int>(std::lround(b.y));
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    put_pixel(img, x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace

void render_overlay(const GridImage& fixed, const GridImage& moving, const AffineParams& theta,
                    const LandmarkSet& fixed_lms, const LandmarkSet& mapped_lms,
                    const std::string& out_path) {
  if (fixed.empty() || moving.empty()) throw DataError("render_overlay: empty image");
  const GridImage warped = warp_image(moving, theta, fixed.height, fixed.width, Interp::bilinear);

  GridImage out(fixed.height, fixed.width, 3);
  for (int y = 0; y < fixed.height; ++y) {
    for (int x = 0; x < fixed.width; ++x) {
      float gray = 0.0f;
      for (int c = 0; c < fixed.channels; ++c) gray += fixed.at(y, x, c);
      gray /= fixed.channels;
      float lum = 0.0f;
      for (int c = 0; c < warped.channels; ++c) lum += warped.at(y, x, c);
      lum /= warped.channels;
      // warped intensity drives the transparency: black stays see-through
      const float a = 0.5f * std::clamp(lum, 0.0f, 1.0f);
      for (int c = 0; c < 3; ++c) {
        const float mv = warped.channels == 3 ? warped.at(y, x, c) : lum;
        out.at(y, x, c) = std::clamp(gray * (1.0f - a) + mv * a, 0.0f, 1.0f);
      }
    }
  }

  std::map<std::string, Vec2> mapped_by_id;
  for (std::size_t i = 0; i < mapped_lms.size(); ++i) {
    mapped_by_id[mapped_lms.ids[i]] = mapped_lms.points[i];
  }
  for (std::size_t i = 0; i < fixed_lms.size(); ++i) {
    auto it = mapped_by_id.find(fixed_lms.ids[i]);
    if (it != mapped_by_id.end()) draw_segment(out, fixed_lms.points[i], it->second, kSegmentColor);
  }
  for (std::size_t i = 0; i < fixed_lms.size(); ++i) draw_disc(out, fixed_lms.points[i], 2, kFixedLmColor);
  for (std::size_t i = 0; i < mapped_lms.size(); ++i) draw_disc(out, mapped_lms.points[i], 2, kMappedLmColor);

  save_image_png(out_path, out);
}

}  // namespace mmreg
