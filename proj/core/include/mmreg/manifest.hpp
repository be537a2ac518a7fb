#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mmreg/image.hpp"

namespace mmreg {

// Integer pixel rectangle on the fixed image, half-open: [x0, x1) x [y0, y1).
struct BoxRoi {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

// One dataset row: a fixed/moving image pair with optional masks, landmarks
// and a Box-ROI locating the segment on the full fixed image. Paths are
// stored as written in the file; resolve_path() makes them usable from
// anywhere by anchoring relative paths at the manifest's directory.
struct PairManifestEntry {
  std::string pair_id;
  std::string patient_id;
  std::string fixed_path;
  std::string moving_path;
  std::string fixed_mask_path;       // optional, empty when absent
  std::string moving_mask_path;      // optional
  std::string fixed_landmarks_path;  // optional
  std::string moving_landmarks_path; // optional
  double fixed_spacing_mm = 0.0;
  double moving_spacing_mm = 0.0;
  std::optional<BoxRoi> box_roi;

  std::string base_dir;  // directory of the manifest file; not serialized

  std::string resolve_path(const std::string& p) const;
};

inline constexpr std::array<const char*, 14> kManifestColumns = {
    "pair_id", "patient_id", "fixed_path", "moving_path", "fixed_mask_path",
    "moving_mask_path", "fixed_landmarks_path", "moving_landmarks_path",
    "fixed_spacing_mm", "moving_spacing_mm", "box_x0", "box_y0", "box_x1", "box_y1"};

// Loads and validates a manifest CSV. Checks: parseable rows, unique
// pair_ids, non-empty patient ids, positive spacings, well-ordered box, and
// that referenced files exist. Order of the file is preserved.
std::vector<PairManifestEntry> load_manifest(const std::string& path);

// Re-serializes entries with the exact column set of load_manifest.
void save_manifest(const std::string& path, const std::vector<PairManifestEntry>& entries);

// Fully loaded pair, ready for registration or evaluation.
struct RegistrationPair {
  GridImage fixed;
  GridImage moving;
  std::optional<BinaryMask> fixed_mask;
  std::optional<BinaryMask> moving_mask;
  std::optional<LandmarkSet> fixed_landmarks;
  std::optional<LandmarkSet> moving_landmarks;
  PairManifestEntry meta;
};

// Reads everything an entry references. Applies the Box-ROI crop to the
// fixed image (and fixed mask) when present, and tags modalities
// (fixed=xray, moving=histology).
RegistrationPair load_pair(const PairManifestEntry& entry);

}  // namespace mmreg
