#pragma once

#include <array>
#include <vector>

namespace mmreg {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }

// 2-D affine map over normalized coordinates x, y in [-1, 1]:
//   x' = a11*x + a12*y + tx
//   y' = a21*x + a22*y + ty
// Parameter layout is row-major with the translation last per row:
//   theta = [a11, a12, tx, a21, a22, ty]
// By convention theta is a backward sampling map: it takes fixed-grid
// normalized coordinates to moving-image normalized coordinates, which is
// what a resampler consumes. Mapping content from the moving frame into the
// fixed frame therefore uses invert().
struct AffineParams {
  std::array<double, 6> theta{1.0, 0.0, 0.0, 0.0, 1.0, 0.0};

  double a11() const { return theta[0]; }
  double a12() const { return theta[1]; }
  double tx() const { return theta[2]; }
  double a21() const { return theta[3]; }
  double a22() const { return theta[4]; }
  double ty() const { return theta[5]; }

  Vec2 operator()(Vec2 p) const {
    return {theta[0] * p.x + theta[1] * p.y + theta[2],
            theta[3] * p.x + theta[4] * p.y + theta[5]};
  }

  double det() const { return theta[0] * theta[4] - theta[1] * theta[3]; }
  bool finite() const;
};

// Determinant magnitude below which invert() refuses to proceed.
inline constexpr double kSingularDetThreshold = 1e-6;

AffineParams identity_params();

// theta = alpha * theta_hat + identity. Keeps raw network estimates anchored
// near the identity map. Throws NumericError on non-finite input.
AffineParams anchor_params(const std::array<double, 6>& theta_hat, double alpha);

// compose(outer, inner)(p) == outer(inner(p)).
AffineParams compose(const AffineParams& outer, const AffineParams& inner);

// Throws SingularTransform when |det| <= kSingularDetThreshold.
AffineParams invert(const AffineParams& t);

std::vector<Vec2> apply_to_points(const AffineParams& t, const std::vector<Vec2>& pts);

// Pixel <-> normalized coordinate mapping with the corner convention:
// pixel (0, 0) -> (-1, -1), pixel (W-1, H-1) -> (1, 1). Shapes are (H, W)
// and must have both dimensions >= 2.
Vec2 pixel_to_norm(Vec2 pt_px, int height, int width);
Vec2 norm_to_pixel(Vec2 pt_norm, int height, int width);

}  // namespace mmreg
