#include <doctest.h>

#include <cmath>
#include <fstream>

#include "mmreg/error.hpp"
#include "mmreg/image_io.hpp"
#include "mmreg/synth.hpp"
#include "support/oracles.hpp"
#include "support/tmpdir.hpp"

using namespace mmreg;

namespace {

TransformSamplerConfig collapsed() {
  TransformSamplerConfig cfg;
  cfg.rotation_deg_min = cfg.rotation_deg_max = 0.0;
  cfg.scale_min = cfg.scale_max = 1.0;
  cfg.translation_frac = 0.0;
  cfg.shear_frac = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("collapsed sampler yields the identity") {
  Rng rng(1);
  const AffineParams t = sample_transform(collapsed(), rng);
  for (int i = 0; i < 6; ++i) CHECK(t.theta[i] == identity_params().theta[i]);
}

TEST_CASE("factor decomposition inverts the generating composition exactly") {
  Rng rng(2);
  for (int it = 0; it < 1000; ++it) {
    TransformFactors f;
    f.rotation_deg = rng.uniform(-20, 20);
    f.scale_x = rng.uniform(0.9, 1.1);
    f.scale_y = rng.uniform(0.9, 1.1);
    f.shear = rng.uniform(-0.05, 0.05);
    f.translate_x = rng.uniform(-0.4, 0.4);
    f.translate_y = rng.uniform(-0.4, 0.4);
    const TransformFactors r = decompose_factors(compose_factors(f));
    CHECK(r.rotation_deg == doctest::Approx(f.rotation_deg).epsilon(1e-10));
    CHECK(r.scale_x == doctest::Approx(f.scale_x).epsilon(1e-10));
    CHECK(r.scale_y == doctest::Approx(f.scale_y).epsilon(1e-10));
    CHECK(r.shear == doctest::Approx(f.shear).epsilon(1e-9));
    CHECK(r.translate_x == f.translate_x);
    CHECK(r.translate_y == f.translate_y);
  }
}

TEST_CASE("sampled transforms respect the constraint box") {
  TransformSamplerConfig cfg;  // defaults: the published bounds
  Rng rng(42);
  double rot_lo = 1e9, rot_hi = -1e9, sc_lo = 1e9, sc_hi = -1e9;
  for (int it = 0; it < 10000; ++it) {
    const AffineParams t = sample_transform(cfg, rng);
    const TransformFactors f = decompose_factors(t);
    CHECK(f.rotation_deg >= cfg.rotation_deg_min - 1e-9);
    CHECK(f.rotation_deg <= cfg.rotation_deg_max + 1e-9);
    CHECK(f.scale_x >= cfg.scale_min - 1e-9);
    CHECK(f.scale_x <= cfg.scale_max + 1e-9);
    CHECK(f.scale_y >= cfg.scale_min - 1e-9);
    CHECK(f.scale_y <= cfg.scale_max + 1e-9);
    CHECK(std::abs(f.shear) <= cfg.shear_frac + 1e-9);
    CHECK(std::abs(f.translate_x) <= 2.0 * cfg.translation_frac + 1e-9);
    CHECK(std::abs(f.translate_y) <= 2.0 * cfg.translation_frac + 1e-9);
    rot_lo = std::min(rot_lo, f.rotation_deg);
    rot_hi = std::max(rot_hi, f.rotation_deg);
    sc_lo = std::min(sc_lo, f.scale_x);
    sc_hi = std::max(sc_hi, f.scale_x);
  }
  // the sampler actually exercises the configured ranges
  CHECK(rot_lo < -19.0);
  CHECK(rot_hi > 19.0);
  CHECK(sc_lo < 0.905);
  CHECK(sc_hi > 1.095);
}

TEST_CASE("sampling is deterministic given the rng state") {
  TransformSamplerConfig cfg;
  Rng a(42), b(42);
  for (int it = 0; it < 100; ++it) {
    const AffineParams ta = sample_transform(cfg, a);
    const AffineParams tb = sample_transform(cfg, b);
    CHECK(ta.theta == tb.theta);
  }
}

TEST_CASE("make_pair: collapsed config reproduces the source bit-exactly") {
  Rng img_rng(7), rng(8);
  const GridImage src = oracles::random_image(48, 48, 1, img_rng);
  BinaryMask mask(48, 48, 1);
  const SyntheticSample s = make_pair(src, mask, collapsed(), rng);
  CHECK(s.moving.pixels == src.pixels);
  CHECK(s.moving_mask.pixels == mask.pixels);
  CHECK(s.gt_params.theta == identity_params().theta);
}

TEST_CASE("make_pair: the sample reproduces through the same warp path") {
  Rng img_rng(9), rng(10);
  const GridImage src = oracles::random_image(64, 64, 3, img_rng);
  BinaryMask mask(64, 64, 1);
  TransformSamplerConfig cfg;
  const SyntheticSample s = make_pair(src, mask, cfg, rng);
  const GridImage again = warp_image(src, s.gt_params, 64, 64, Interp::bilinear);
  CHECK(s.moving.pixels == again.pixels);
}

TEST_CASE("translation-only transform displaces the mask centroid accordingly") {
  // disk mask in a mid-gray frame
  GridImage src(101, 101, 1, 0.5f);
  BinaryMask mask(101, 101, 0);
  for (int y = 0; y < 101; ++y) {
    for (int x = 0; x < 101; ++x) {
      if ((x - 50) * (x - 50) + (y - 50) * (y - 50) <= 18 * 18) mask.at(y, x) = 1;
    }
  }
  TransformSamplerConfig cfg = collapsed();
  cfg.translation_frac = 0.1;  // up to 10 px on a 101-wide frame
  Rng rng(11);
  const SyntheticSample s = make_pair(src, mask, cfg, rng);
  const TransformFactors f = decompose_factors(s.gt_params);

  auto centroid = [](const BinaryMask& m) {
    double cx = 0.0, cy = 0.0, n = 0.0;
    for (int y = 0; y < m.height; ++y) {
      for (int x = 0; x < m.width; ++x) {
        if (m.at(y, x)) {
          cx += x;
          cy += y;
          n += 1.0;
        }
      }
    }
    return Vec2{cx / n, cy / n};
  };
  const Vec2 c0 = centroid(mask);
  const Vec2 c1 = centroid(s.moving_mask);
  // backward map with translation t shifts content by -t (normalized -> px)
  const double expect_dx = -f.translate_x * 0.5 * (101 - 1);
  const double expect_dy = -f.translate_y * 0.5 * (101 - 1);
  CHECK(std::abs((c1.x - c0.x) - expect_dx) < 1.0);
  CHECK(std::abs((c1.y - c0.y) - expect_dy) < 1.0);
}

namespace {

std::string make_toy_manifest(const oracles::TmpDir& tmp, int entries) {
  const std::string header =
      "pair_id,patient_id,fixed_path,moving_path,fixed_mask_path,moving_mask_path,"
      "fixed_landmarks_path,moving_landmarks_path,fixed_spacing_mm,moving_spacing_mm,"
      "box_x0,box_y0,box_x1,box_y1\n";
  std::ofstream m(tmp.file("manifest.csv"));
  m << header;
  for (int i = 0; i < entries; ++i) {
    Rng rng(100 + i);
    const std::string f = "e" + std::to_string(i) + "_f.png";
    const std::string v = "e" + std::to_string(i) + "_m.png";
    save_image_png(tmp.file(f), oracles::random_image(40, 40, 1, rng));
    save_image_png(tmp.file(v), oracles::random_image(40, 40, 3, rng));
    m << "pair" << i << ",patient" << i << "," << f << "," << v << ",,,,,0.1,0.01,,,,\n";
  }
  m.close();
  return tmp.file("manifest.csv");
}

}  // namespace

TEST_CASE("build_training_set counts, determinism and modality balance") {
  oracles::TmpDir tmp("synthset");
  const std::string manifest = make_toy_manifest(tmp, 2);
  const auto entries = load_manifest(manifest);

  TransformSamplerConfig cfg;
  cfg.seed = 77;
  std::vector<SyntheticSample> run1, run2;
  build_training_set(entries, 3, cfg, [&](SyntheticSample&& s) { run1.push_back(std::move(s)); });
  build_training_set(entries, 3, cfg, [&](SyntheticSample&& s) { run2.push_back(std::move(s)); });

  // 2 entries x both modalities x per_image=3
  REQUIRE(run1.size() == 12);
  REQUIRE(run2.size() == 12);
  int n_xray = 0, n_hist = 0;
  for (const auto& s : run1) (s.source_modality == Modality::xray ? n_xray : n_hist)++;
  CHECK(n_xray == 6);
  CHECK(n_hist == 6);

  for (std::size_t i = 0; i < run1.size(); ++i) {
    CHECK(run1[i].gt_params.theta == run2[i].gt_params.theta);
    CHECK(run1[i].moving.pixels == run2[i].moving.pixels);
    CHECK(run1[i].source_pair_id == run2[i].source_pair_id);
  }

  SUBCASE("collapsed config emits identity ground truth everywhere") {
    std::vector<SyntheticSample> out;
    TransformSamplerConfig id_cfg = collapsed();
    id_cfg.seed = 5;
    build_training_set(entries, 1, id_cfg,
                       [&](SyntheticSample&& s) { out.push_back(std::move(s)); });
    for (const auto& s : out) CHECK(s.gt_params.theta == identity_params().theta);
  }
}

TEST_CASE("sample cache round-trips through the on-disk format") {
  oracles::TmpDir tmp("cache");
  Rng img_rng(21), rng(22);
  const GridImage src = oracles::random_image(33, 37, 1, img_rng);
  BinaryMask mask(33, 37, 0);
  for (int y = 10; y < 22; ++y) {
    for (int x = 12; x < 30; ++x) mask.at(y, x) = 1;
  }
  TransformSamplerConfig cfg;
  SyntheticSample s = make_pair(src, mask, cfg, rng);
  s.source_pair_id = "pairX";
  s.patient_id = "patX";
  s.source_modality = Modality::xray;
  s.sample_index = 3;

  write_sample_dir(tmp.file("s0"), s);
  const SyntheticSample back = read_sample_dir(tmp.file("s0"));
  CHECK(back.fixed.height == 33);
  CHECK(back.moving.width == 37);
  CHECK(back.fixed_mask.pixels == s.fixed_mask.pixels);
  CHECK(back.moving_mask.pixels == s.moving_mask.pixels);
  CHECK(back.source_pair_id == "pairX");
  CHECK(back.patient_id == "patX");
  CHECK(back.source_modality == Modality::xray);
  CHECK(back.sample_index == 3);
  // gt_params file carries 6 decimals
  for (int i = 0; i < 6; ++i) {
    CHECK(back.gt_params.theta[i] == doctest::Approx(s.gt_params.theta[i]).epsilon(1e-6));
  }
}

TEST_CASE("modality histogram of a large stream is binomially balanced") {
  oracles::TmpDir tmp("balance");
  const auto entries = load_manifest(make_toy_manifest(tmp, 2));
  TransformSamplerConfig cfg;
  cfg.seed = 99;
  int n = 0, n_xray = 0;
  build_training_set(entries, 50, cfg, [&](SyntheticSample&& s) {
    ++n;
    if (s.source_modality == Modality::xray) ++n_xray;
  });
  // the builder emits exactly one xray stream per entry: deterministic 50/50
  CHECK(n == 200);
  CHECK(n_xray == 100);
}
