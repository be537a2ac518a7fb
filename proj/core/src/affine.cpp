#include "mmreg/affine.hpp"

#include <cmath>
#include <sstream>

#include "mmreg/error.hpp"

namespace mmreg {

bool AffineParams::finite() const {
  for (double v : theta) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

AffineParams identity_params() { return AffineParams{}; }

AffineParams anchor_params(const std::array<double, 6>& theta_hat, double alpha) {
  for (double v : theta_hat) {
    if (!std::isfinite(v)) throw NumericError("anchor_params: non-finite parameter estimate");
  }
  if (!std::isfinite(alpha) || alpha < 0.0) {
    throw NumericError("anchor_params: alpha must be finite and non-negative");
  }
  AffineParams id = identity_params();
  AffineParams out;
  for (int i = 0; i < 6; ++i) out.theta[i] = alpha * theta_hat[i] + id.theta[i];
  return out;
}

AffineParams compose(const AffineParams& outer, const AffineParams& inner) {
  const auto& a = outer.theta;
  const auto& b = inner.theta;
  AffineParams out;
  out.theta[0] = a[0] * b[0] + a[1] * b[3];
  out.theta[1] = a[0] * b[1] + a[1] * b[4];
  out.theta[2] = a[0] * b[2] + a[1] * b[5] + a[2];
  out.theta[3] = a[3] * b[0] + a[4] * b[3];
  out.theta[4] = a[3] * b[1] + a[4] * b[4];
  out.theta[5] = a[3] * b[2] + a[4] * b[5] + a[5];
  return out;
}

AffineParams invert(const AffineParams& t) {
  const double det = t.det();
  if (!(std::abs(det) > kSingularDetThreshold)) {
    std::ostringstream msg;
    msg << "invert: linear part is near-singular (|det| = " << std::abs(det) << ")";
    throw SingularTransform(msg.str());
  }
  const auto& a = t.theta;
  AffineParams out;
  out.theta[0] = a[4] / det;
  out.theta[1] = -a[1] / det;
  out.theta[3] = -a[3] / det;
  out.theta[4] = a[0] / det;
  out.theta[2] = -(out.theta[0] * a[2] + out.theta[1] * a[5]);
  out.theta[5] = -(out.theta[3] * a[2] + out.theta[4] * a[5]);
  return out;
}

std::vector<Vec2> apply_to_points(const AffineParams& t, const std::vector<Vec2>& pts) {
  std::vector<Vec2> out;
  out.reserve(pts.size());
  for (const Vec2& p : pts) out.push_back(t(p));
  return out;
}

Vec2 pixel_to_norm(Vec2 pt_px, int height, int width) {
  if (height < 2 || width < 2) {
    throw DataError("pixel_to_norm: image dimensions must be >= 2");
  }
  return {2.0 * pt_px.x / (width - 1) - 1.0, 2.0 * pt_px.y / (height - 1) - 1.0};
}

Vec2 norm_to_pixel(Vec2 pt_norm, int height, int width) {
  if (height < 2 || width < 2) {
    throw DataError("norm_to_pixel: image dimensions must be >= 2");
  }
  return {(pt_norm.x + 1.0) * 0.5 * (width - 1), (pt_norm.y + 1.0) * 0.5 * (height - 1)};
}

}  // namespace mmreg
