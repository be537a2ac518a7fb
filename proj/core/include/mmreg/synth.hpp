#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mmreg/affine.hpp"
#include "mmreg/image.hpp"
#include "mmreg/manifest.hpp"
#include "mmreg/rng.hpp"

namespace mmreg {

// Constraint box for random affine sampling. Translation and shear bounds
// are symmetric around zero; translation_frac is a fraction of the image
// size per axis (0.2 -> shifts of up to 20% of the width/height).
struct TransformSamplerConfig {
  double rotation_deg_min = -20.0;
  double rotation_deg_max = 20.0;
  double scale_min = 0.9;
  double scale_max = 1.1;
  double translation_frac = 0.2;
  double shear_frac = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
  bool is_identity() const;
};

// Factors of a sampled transform, in the generating composition order
// A = R(rotation) * diag(scale_x, scale_y) * Shear(shear), translation last,
// all about the image center (the origin of normalized coordinates).
struct TransformFactors {
  double rotation_deg = 0.0;
  double scale_x = 1.0;
  double scale_y = 1.0;
  double shear = 0.0;
  double translate_x = 0.0;  // normalized units ([-1,1] spans the image)
  double translate_y = 0.0;
};

AffineParams compose_factors(const TransformFactors& f);

// Recovers the factors of a transform produced by compose_factors. Exact
// (up to rounding) for this composition order; used to check that sampled
// transforms respect the constraint box.
TransformFactors decompose_factors(const AffineParams& t);

// Uniformly samples each factor inside its configured interval.
// Deterministic given the rng state.
AffineParams sample_transform(const TransformSamplerConfig& cfg, Rng& rng);

// A mono-modal training pair: the original image is the fixed side, its
// deformation the moving side. gt_params is the exact sampling map used to
// render the moving image (bilinear; mask via nearest).
struct SyntheticSample {
  GridImage fixed;
  GridImage moving;
  BinaryMask fixed_mask;
  BinaryMask moving_mask;
  AffineParams gt_params;
  Modality source_modality = Modality::synthetic;

  // provenance (drives patient-level isolation checks)
  std::string source_pair_id;
  std::string patient_id;
  int sample_index = 0;
};

SyntheticSample make_pair(const GridImage& src, const BinaryMask& src_mask,
                          const TransformSamplerConfig& cfg, Rng& rng);

// Yields per_image samples for BOTH modalities of every manifest entry, in
// entry order (fixed image first, then moving). Each source image gets an
// rng substream derived from (cfg.seed, pair_id, modality) so the stream is
// deterministic and order-stable under any execution interleaving.
void build_training_set(const std::vector<PairManifestEntry>& entries, int per_image,
                        const TransformSamplerConfig& cfg,
                        const std::function<void(SyntheticSample&&)>& sink);

// On-disk cache: one directory per sample with fixed/moving PNGs, masks and
// a gt_params.txt (6 values, 6 decimals, row-major).
void write_sample_dir(const std::string& dir, const SyntheticSample& sample);
SyntheticSample read_sample_dir(const std::string& dir);

}  // namespace mmreg
