#include "mmreg/synth.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mmreg/error.hpp"
#include "mmreg/image_io.hpp"

namespace fs = std::filesystem;

namespace mmreg {

void TransformSamplerConfig::validate() const {
  if (rotation_deg_min > rotation_deg_max || scale_min > scale_max) {
    throw ConfigError("transform sampler: intervals must be well-ordered");
  }
  if (!(scale_min > 0.0)) throw ConfigError("transform sampler: scales must be positive");
  if (translation_frac < 0.0 || shear_frac < 0.0) {
    throw ConfigError("transform sampler: translation/shear bounds must be >= 0");
  }
}

bool TransformSamplerConfig::is_identity() const {
  return rotation_deg_min == 0.0 && rotation_deg_max == 0.0 && scale_min == 1.0 &&
         scale_max == 1.0 && translation_frac == 0.0 && shear_frac == 0.0;
}

AffineParams compose_factors(const TransformFactors& f) {
  const double phi = f.rotation_deg * M_PI / 180.0;
  const double c = std::cos(phi);
  const double s = std::sin(phi);
  // A = R * S * Shear with Shear = [[1, h], [0, 1]] (upper triangular)
  const double u11 = f.scale_x;
  const double u12 = f.scale_x * f.shear;
  const double u22 = f.scale_y;
  AffineParams t;
  t.theta[0] = c * u11;
  t.theta[1] = c * u12 - s * u22;
  t.theta[2] = f.translate_x;
  t.theta[3] = s * u11;
  t.theta[4] = s * u12 + c * u22;
  t.theta[5] = f.translate_y;
  return t;
}

TransformFactors decompose_factors(const AffineParams& t) {
  TransformFactors f;
  // Givens rotation: A = R(phi) * U with U upper triangular, u11 > 0.
  const double phi = std::atan2(t.theta[3], t.theta[0]);
  const double c = std::cos(phi);
  const double s = std::sin(phi);
  const double u11 = c * t.theta[0] + s * t.theta[3];
  const double u12 = c * t.theta[1] + s * t.theta[4];
  const double u22 = -s * t.theta[1] + c * t.theta[4];
  f.rotation_deg = phi * 180.0 / M_PI;
  f.scale_x = u11;
  f.scale_y = u22;
  f.shear = u11 != 0.0 ? u12 / u11 : 0.0;
  f.translate_x = t.theta[2];
  f.translate_y = t.theta[5];
  return f;
}

AffineParams sample_transform(const TransformSamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  TransformFactors f;
  f.rotation_deg = rng.uniform(cfg.rotation_deg_min, cfg.rotation_deg_max);
  f.scale_x = rng.uniform(cfg.scale_min, cfg.scale_max);
  f.scale_y = rng.uniform(cfg.scale_min, cfg.scale_max);
  f.shear = rng.uniform(-cfg.shear_frac, cfg.shear_frac);
  // translation_frac is a fraction of the image size; normalized coordinates
  // span 2 units across the image, so the bound scales by 2.
  f.translate_x = rng.uniform(-cfg.translation_frac, cfg.translation_frac) * 2.0;
  f.translate_y = rng.uniform(-cfg.translation_frac, cfg.translation_frac) * 2.0;
  return compose_factors(f);
}

SyntheticSample make_pair(const GridImage& src, const BinaryMask& src_mask,
                          const TransformSamplerConfig& cfg, Rng& rng) {
  if (src.height != src_mask.height || src.width != src_mask.width) {
    throw DataError("make_pair: source image and mask shapes differ");
  }
  SyntheticSample s;
  s.gt_params = sample_transform(cfg, rng);
  s.fixed = src;
  s.fixed_mask = src_mask;
  s.moving = warp_image(src, s.gt_params, src.height, src.width, Interp::bilinear);
  s.moving_mask = warp_mask(src_mask, s.gt_params, src.height, src.width);
  s.source_modality = src.modality;
  return s;
}

void build_training_set(const std::vector<PairManifestEntry>& entries, int per_image,
                        const TransformSamplerConfig& cfg,
                        const std::function<void(SyntheticSample&&)>& sink) {
  if (per_image < 1) throw ConfigError("build_training_set: per_image must be >= 1");
  cfg.validate();
  for (const auto& entry : entries) {
    RegistrationPair pair = load_pair(entry);
    for (int side = 0; side < 2; ++side) {
      const bool is_fixed = side == 0;
      const GridImage& src = is_fixed ? pair.fixed : pair.moving;
      BinaryMask mask;
      if (is_fixed && pair.fixed_mask) {
        mask = *pair.fixed_mask;
      } else if (!is_fixed && pair.moving_mask) {
        mask = *pair.moving_mask;
      } else {
        // No tissue mask supplied: treat the whole frame as tissue.
        mask = BinaryMask(src.height, src.width, 1);
        mask.spacing_mm = src.spacing_mm;
      }
      Rng rng(mix_seed(cfg.seed, stable_hash(entry.pair_id), is_fixed ? 0 : 1));
      for (int k = 0; k < per_image; ++k) {
        SyntheticSample s = make_pair(src, mask, cfg, rng);
        s.source_pair_id = entry.pair_id;
        s.patient_id = entry.patient_id;
        s.sample_index = k;
        sink(std::move(s));
      }
    }
  }
}

void write_sample_dir(const std::string& dir, const SyntheticSample& sample) {
  fs::create_directories(dir);
  save_image_png((fs::path(dir) / "fixed.png").string(), sample.fixed);
  save_image_png((fs::path(dir) / "moving.png").string(), sample.moving);
  save_mask_png((fs::path(dir) / "fixed_mask.png").string(), sample.fixed_mask);
  save_mask_png((fs::path(dir) / "moving_mask.png").string(), sample.moving_mask);
  std::ofstream out(fs::path(dir) / "gt_params.txt");
  if (!out) throw DataError("cannot write gt_params in " + dir);
  char buf[64];
  for (int i = 0; i < 6; ++i) {
    std::snprintf(buf, sizeof(buf), "%.6f", sample.gt_params.theta[i]);
    out << buf << (i + 1 < 6 ? " " : "\n");
  }
  std::ofstream meta(fs::path(dir) / "meta.txt");
  meta << "source_pair_id " << sample.source_pair_id << "\n"
       << "patient_id " << sample.patient_id << "\n"
       << "modality " << to_string(sample.source_modality) << "\n"
       << "sample_index " << sample.sample_index << "\n";
}

SyntheticSample read_sample_dir(const std::string& dir) {
  SyntheticSample s;
  s.fixed = load_image((fs::path(dir) / "fixed.png").string(), Modality::synthetic);
  s.moving = load_image((fs::path(dir) / "moving.png").string(), Modality::synthetic);
  s.fixed_mask = load_mask((fs::path(dir) / "fixed_mask.png").string());
  s.moving_mask = load_mask((fs::path(dir) / "moving_mask.png").string());
  std::ifstream in(fs::path(dir) / "gt_params.txt");
  if (!in) throw DataError("missing gt_params.txt in " + dir);
  for (int i = 0; i < 6; ++i) {
    if (!(in >> s.gt_params.theta[i])) throw DataError("malformed gt_params.txt in " + dir);
  }
  std::ifstream meta(fs::path(dir) / "meta.txt");
  if (meta) {
    std::string key;
    while (meta >> key) {
      std::string value;
      std::getline(meta, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      if (key == "source_pair_id") s.source_pair_id = value;
      else if (key == "patient_id") s.patient_id = value;
      else if (key == "modality") s.source_modality = modality_from_string(value);
      else if (key == "sample_index") s.sample_index = std::stoi(value);
    }
  }
  return s;
}

}  // namespace mmreg
