#include <doctest.h>

#include <cmath>

#include "mmreg/error.hpp"
#include "mmreg/image.hpp"
#include "support/oracles.hpp"

using namespace mmreg;

TEST_CASE("identity warp is bit-exact") {
  Rng rng(31);
  const GridImage img = oracles::random_image(57, 43, 3, rng);
  for (Interp interp : {Interp::nearest, Interp::bilinear}) {
    const GridImage out = warp_image(img, identity_params(), img.height, img.width, interp);
    REQUIRE(out.pixels.size() == img.pixels.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(out.pixels[i] == img.pixels[i]);
  }
}

TEST_CASE("integer-pixel translation moves a bright pixel the opposite way") {
  GridImage img(101, 101, 1);
  img.at(10, 10, 0) = 1.0f;
  // A backward sampling offset of (+5, +3) pixels in normalized units: the
  // output at (x, y) reads moving(x+5, y+3), so content shifts by (-5, -3).
  AffineParams t = identity_params();
  t.theta[2] = 2.0 * 5 / (101 - 1);
  t.theta[5] = 2.0 * 3 / (101 - 1);
  const GridImage out = warp_image(img, t, 101, 101, Interp::nearest);

  // enumerate sampling positions: output(y, x) = img(y+3, x+5)
  for (int y = 0; y < 101; ++y) {
    for (int x = 0; x < 101; ++x) {
      const float expect = (y + 3 == 10 && x + 5 == 10) ? 1.0f : 0.0f;
      CHECK(out.at(y, x, 0) == expect);
    }
  }
  CHECK(out.at(7, 5, 0) == 1.0f);
}

TEST_CASE("constant image stays constant under in-bounds affine warps") {
  GridImage img(64, 64, 1, 0.73f);
  AffineParams t;
  t.theta = {0.9, 0.05, 0.01, -0.04, 0.92, -0.02};  // mildly contracting: stays in bounds
  const GridImage out = warp_image(img, t, 64, 64, Interp::bilinear);
  for (float v : out.pixels) CHECK(v == doctest::Approx(0.73f).epsilon(1e-6));
}

TEST_CASE("out-of-bounds samples fill with zero") {
  GridImage img(32, 32, 1, 1.0f);
  AffineParams t = identity_params();
  t.theta[2] = 1.5;  // shifts sampling far right: right part of grid leaves the image
  const GridImage out = warp_image(img, t, 32, 32, Interp::bilinear);
  CHECK(out.at(16, 31, 0) == 0.0f);
  CHECK(out.at(16, 0, 0) > 0.0f);
}

TEST_CASE("warp composition approximates a single composed warp on smooth images") {
  Rng rng(37);
  GridImage img = oracles::gaussian_blur(oracles::random_image(96, 96, 1, rng), 3.0);
  AffineParams t1 = oracles::random_affine(rng, 0.5);
  AffineParams t2 = oracles::random_affine(rng, 0.5);

  const GridImage two_step = warp_image(warp_image(img, t2, 96, 96, Interp::bilinear), t1, 96, 96,
                                        Interp::bilinear);
  const GridImage one_step = warp_image(img, compose(t2, t1), 96, 96, Interp::bilinear);
  double mad = 0.0;
  for (std::size_t i = 0; i < two_step.pixels.size(); ++i) {
    mad += std::abs(two_step.pixels[i] - one_step.pixels[i]);
  }
  mad /= static_cast<double>(two_step.pixels.size());
  CHECK(mad < 0.02);
}

TEST_CASE("warp_image validates inputs") {
  GridImage img(8, 8, 1);
  AffineParams bad = identity_params();
  bad.theta[0] = std::nan("");
  CHECK_THROWS_AS(warp_image(img, bad, 8, 8, Interp::nearest), NumericError);
  CHECK_THROWS_AS(warp_image(img, identity_params(), 1, 8, Interp::nearest), DataError);
  CHECK_THROWS_AS(warp_image(GridImage{}, identity_params(), 8, 8, Interp::nearest), DataError);
}

TEST_CASE("warp_mask keeps values binary and uses nearest sampling") {
  BinaryMask mask(41, 41);
  for (int y = 15; y < 26; ++y) {
    for (int x = 15; x < 26; ++x) mask.at(y, x) = 1;
  }
  Rng rng(41);
  const AffineParams t = oracles::random_affine(rng, 0.6);
  const BinaryMask out = warp_mask(mask, t, 41, 41);
  out.validate("warped mask");
  const BinaryMask same = warp_mask(mask, identity_params(), 41, 41);
  CHECK(same.pixels == mask.pixels);
}
