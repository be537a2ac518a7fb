#include <doctest.h>

#include <cmath>
#include <fstream>

#include "mmreg/error.hpp"
#include "mmreg/image_io.hpp"
#include "mmreg/manifest.hpp"
#include "mmreg/preprocess.hpp"
#include "support/oracles.hpp"
#include "support/tmpdir.hpp"

using namespace mmreg;

#ifndef MMREG_TEST_DATA_DIR
#define MMREG_TEST_DATA_DIR "tests/data"
#endif

static std::string fixture(const std::string& name) {
  return std::string(MMREG_TEST_DATA_DIR) + "/fixtures/" + name;
}

TEST_CASE("PNG round-trip within 8-bit quantization") {
  oracles::TmpDir tmp("png");
  Rng rng(3);
  GridImage img = oracles::random_image(20, 30, 3, rng);
  img.pixels.front() = 0.0f;  // pin the dynamic range so min-max is identity
  img.pixels.back() = 1.0f;
  save_image_png(tmp.file("a.png"), img);
  const GridImage back = load_image(tmp.file("a.png"), Modality::histology);
  REQUIRE(back.height == img.height);
  REQUIRE(back.width == img.width);
  REQUIRE(back.channels == 3);
  CHECK(back.modality == Modality::histology);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    CHECK(std::abs(back.pixels[i] - img.pixels[i]) <= 1.0f / 255.0f + 1e-6f);
  }
}

TEST_CASE("16-bit PNG and TIFF decode with min-max normalization") {
  const GridImage png16 = load_image(fixture("gray16.png"), Modality::xray);
  REQUIRE(png16.height == 16);
  REQUIRE(png16.width == 24);
  REQUIRE(png16.channels == 1);
  CHECK(png16.at(0, 0, 0) == 0.0f);
  CHECK(png16.at(15, 23, 0) == 1.0f);
  png16.validate("png16");

  const GridImage tif16 = load_image(fixture("gray16.tif"), Modality::xray);
  REQUIRE(tif16.height == 16);
  CHECK(tif16.at(15, 23, 0) == 1.0f);

  const GridImage rgb = load_image(fixture("rgb8.tif"), Modality::histology);
  REQUIRE(rgb.channels == 3);
  REQUIRE(rgb.height == 12);
  // channel order is RGB: the fixture has constant 200 in red
  const float expected_red = 200.0f / 200.0f;  // max value in the fixture is 200
  CHECK(rgb.at(0, 0, 0) == doctest::Approx(expected_red));
}

TEST_CASE("constant image normalizes to zeros") {
  oracles::TmpDir tmp("const");
  GridImage img(8, 8, 1, 0.4f);
  save_image_png(tmp.file("c.png"), img);
  const GridImage back = load_image(tmp.file("c.png"), Modality::xray);
  for (float v : back.pixels) CHECK(v == 0.0f);
}

TEST_CASE("mask IO: nonzero means tissue, round-trips") {
  oracles::TmpDir tmp("mask");
  BinaryMask mask(10, 12);
  for (int y = 2; y < 7; ++y) {
    for (int x = 3; x < 9; ++x) mask.at(y, x) = 1;
  }
  save_mask_png(tmp.file("m.png"), mask);
  const BinaryMask back = load_mask(tmp.file("m.png"));
  CHECK(back.pixels == mask.pixels);
}

TEST_CASE("landmark IO round-trip, bounds and duplicates") {
  oracles::TmpDir tmp("lms");
  {
    std::ofstream f(tmp.file("ok.csv"));
    f << "id,x,y\nL1,10,20\nL2,30,40\n";
  }
  const LandmarkSet lms = read_landmarks(tmp.file("ok.csv"), 64, 64);
  REQUIRE(lms.size() == 2);
  CHECK(lms.ids[0] == "L1");
  CHECK(lms.points[1].x == 30.0);

  // write -> read is exact
  write_landmarks(tmp.file("w.csv"), lms);
  const LandmarkSet again = read_landmarks(tmp.file("w.csv"), 64, 64);
  CHECK(again.ids == lms.ids);
  for (std::size_t i = 0; i < lms.size(); ++i) {
    CHECK(again.points[i].x == lms.points[i].x);
    CHECK(again.points[i].y == lms.points[i].y);
  }

  {
    std::ofstream f(tmp.file("empty.csv"));
    f << "id,x,y\n";
  }
  CHECK(read_landmarks(tmp.file("empty.csv"), 64, 64).empty());

  {
    std::ofstream f(tmp.file("oob.csv"));
    f << "id,x,y\nL7,-1,5\n";
  }
  CHECK_THROWS_WITH_AS(read_landmarks(tmp.file("oob.csv"), 64, 64),
                       doctest::Contains("L7"), OutOfBoundsLandmark);

  {
    std::ofstream f(tmp.file("dup.csv"));
    f << "id,x,y\nL1,1,1\nL1,2,2\n";
  }
  CHECK_THROWS_WITH_AS(read_landmarks(tmp.file("dup.csv"), 64, 64), doctest::Contains("L1"),
                       DataError);
}

TEST_CASE("extract_segment crops pixel-exactly") {
  GridImage ramp(16, 16, 1);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) ramp.at(y, x, 0) = static_cast<float>(y * 16 + x) / 255.0f;
  }

  const GridImage full = extract_segment(ramp, {0, 0, 16, 16});
  CHECK(full.pixels == ramp.pixels);

  const GridImage one = extract_segment(ramp, {0, 0, 1, 1});
  REQUIRE(one.height == 1);
  REQUIRE(one.width == 1);
  CHECK(one.at(0, 0, 0) == ramp.at(0, 0, 0));

  const BoxRoi box{3, 5, 11, 14};
  const GridImage crop = extract_segment(ramp, box);
  REQUIRE(crop.height == 9);
  REQUIRE(crop.width == 8);
  for (int y = 0; y < crop.height; ++y) {
    for (int x = 0; x < crop.width; ++x) {
      CHECK(crop.at(y, x, 0) == ramp.at(box.y0 + y, box.x0 + x, 0));
    }
  }

  CHECK_THROWS_AS(extract_segment(ramp, {8, 8, 20, 12}), BoxOutOfRange);
  CHECK_THROWS_AS(extract_segment(ramp, {4, 4, 4, 8}), BoxOutOfRange);
}

TEST_CASE("prepare_network_input shapes, replication and standardization") {
  Rng rng(5);
  const GridImage big = oracles::random_image(150, 90, 1, rng);
  const GridImage out = prepare_network_input(big);
  REQUIRE(out.height == kNetInputSize);
  REQUIRE(out.width == kNetInputSize);
  REQUIRE(out.channels == 3);
  CHECK(out.standardized);

  // single-channel input: channels identical before standardization, so
  // undoing the per-channel affine recovers one common value
  for (int c = 1; c < 3; ++c) {
    const float v0 = out.at(40, 50, 0) * kChannelStd[0] + kChannelMean[0];
    const float vc = out.at(40, 50, c) * kChannelStd[c] + kChannelMean[c];
    CHECK(v0 == doctest::Approx(vc).epsilon(1e-5));
  }

  // constant 0.5 image: each channel constant at (0.5 - mean_c) / std_c
  const GridImage gray(64, 64, 1, 0.5f);
  const GridImage std_gray = prepare_network_input(gray);
  for (int c = 0; c < 3; ++c) {
    const float expect = (0.5f - kChannelMean[c]) / kChannelStd[c];
    CHECK(std_gray.at(10, 10, c) == doctest::Approx(expect).epsilon(1e-5));
  }

  // 224x224x3 input keeps its shape (resize is a fixed point)
  GridImage exact(kNetInputSize, kNetInputSize, 3, 0.25f);
  const GridImage kept = prepare_network_input(exact);
  CHECK(kept.height == kNetInputSize);

  // re-application is flagged
  CHECK_THROWS_AS(prepare_network_input(kept), DataError);
}

namespace {

std::string write_pair_files(const oracles::TmpDir& tmp, const std::string& stem) {
  Rng rng(stable_hash(stem));
  save_image_png(tmp.file(stem + "_f.png"), oracles::random_image(32, 32, 1, rng));
  save_image_png(tmp.file(stem + "_m.png"), oracles::random_image(40, 36, 3, rng));
  return stem;
}

}  // namespace

TEST_CASE("manifest loading, validation and lossless re-serialization") {
  oracles::TmpDir tmp("manifest");
  write_pair_files(tmp, "p1");
  write_pair_files(tmp, "p2");
  write_pair_files(tmp, "p3");

  const std::string header =
      "pair_id,patient_id,fixed_path,moving_path,fixed_mask_path,moving_mask_path,"
      "fixed_landmarks_path,moving_landmarks_path,fixed_spacing_mm,moving_spacing_mm,"
      "box_x0,box_y0,box_x1,box_y1\n";

  SUBCASE("empty manifest: header only") {
    std::ofstream(tmp.file("m.csv")) << header;
    CHECK(load_manifest(tmp.file("m.csv")).empty());
  }

  SUBCASE("three valid rows preserve order") {
    std::ofstream(tmp.file("m.csv"))
        << header << "a1,PA,p1_f.png,p1_m.png,,,,,0.1,0.01,,,,\n"
        << "b2,PB,p2_f.png,p2_m.png,,,,,0.1,0.01,,,,\n"
        << "c3,PA,p3_f.png,p3_m.png,,,,,0.2,0.02,4,4,20,28\n";
    const auto entries = load_manifest(tmp.file("m.csv"));
    REQUIRE(entries.size() == 3);
    CHECK(entries[0].pair_id == "a1");
    CHECK(entries[1].pair_id == "b2");
    CHECK(entries[2].pair_id == "c3");
    CHECK(entries[2].box_roi.has_value());
    CHECK(entries[2].box_roi->x1 == 20);
    CHECK(entries[0].fixed_spacing_mm == 0.1);

    // loading then re-serializing is lossless
    save_manifest(tmp.file("copy.csv"), entries);
    const auto again = load_manifest(tmp.file("copy.csv"));
    REQUIRE(again.size() == entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
      CHECK(again[i].pair_id == entries[i].pair_id);
      CHECK(again[i].patient_id == entries[i].patient_id);
      CHECK(again[i].fixed_path == entries[i].fixed_path);
      CHECK(again[i].fixed_spacing_mm == entries[i].fixed_spacing_mm);
      CHECK(again[i].box_roi.has_value() == entries[i].box_roi.has_value());
    }
  }

  SUBCASE("duplicate pair_id names the offender") {
    std::ofstream(tmp.file("m.csv"))
        << header << "P01_seg1,PA,p1_f.png,p1_m.png,,,,,0.1,0.01,,,,\n"
        << "P01_seg1,PB,p2_f.png,p2_m.png,,,,,0.1,0.01,,,,\n";
    CHECK_THROWS_WITH_AS(load_manifest(tmp.file("m.csv")), doctest::Contains("P01_seg1"),
                         DuplicatePairId);
  }

  SUBCASE("nonpositive spacing is rejected with the entry name") {
    std::ofstream(tmp.file("m.csv")) << header << "bad,PA,p1_f.png,p1_m.png,,,,,0,0.01,,,,\n";
    CHECK_THROWS_WITH_AS(load_manifest(tmp.file("m.csv")), doctest::Contains("bad"), DataError);
  }

  SUBCASE("missing referenced file is rejected") {
    std::ofstream(tmp.file("m.csv")) << header << "gone,PA,nope.png,p1_m.png,,,,,0.1,0.01,,,,\n";
    CHECK_THROWS_WITH_AS(load_manifest(tmp.file("m.csv")), doctest::Contains("gone"), DataError);
  }

  SUBCASE("malformed row is rejected") {
    std::ofstream(tmp.file("m.csv")) << header << "short,PA,p1_f.png\n";
    CHECK_THROWS_AS(load_manifest(tmp.file("m.csv")), DataError);
  }

  SUBCASE("load_pair applies the Box-ROI crop to the fixed side") {
    std::ofstream(tmp.file("m.csv"))
        << header << "c3,PA,p3_f.png,p3_m.png,,,,,0.2,0.02,4,4,20,28\n";
    const auto entries = load_manifest(tmp.file("m.csv"));
    const RegistrationPair pair = load_pair(entries[0]);
    CHECK(pair.fixed.width == 16);
    CHECK(pair.fixed.height == 24);
    CHECK(pair.fixed.modality == Modality::xray);
    CHECK(pair.moving.modality == Modality::histology);
    CHECK(pair.fixed.spacing_mm.x == 0.2);
  }
}
