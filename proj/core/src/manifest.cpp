#include "mmreg/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "mmreg/csv.hpp"
#include "mmreg/error.hpp"
#include "mmreg/image_io.hpp"
#include "mmreg/preprocess.hpp"

namespace fs = std::filesystem;

namespace mmreg {

std::string PairManifestEntry::resolve_path(const std::string& p) const {
  if (p.empty()) return p;
  fs::path fp(p);
  if (fp.is_absolute() || base_dir.empty()) return p;
  return (fs::path(base_dir) / fp).string();
}

namespace {

double parse_spacing(const std::string& s, const std::string& pair_id, const char* which) {
  double v = 0.0;
  try {
    v = std::stod(s);
  } catch (const std::exception&) {
    throw DataError("manifest entry '" + pair_id + "': non-numeric " + which + " spacing '" + s +
                    "'");
  }
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw DataError("manifest entry '" + pair_id + "': " + which +
                    " spacing must be strictly positive");
  }
  return v;
}

void require_file(const std::string& resolved, const std::string& pair_id, const char* what) {
  if (!fs::exists(resolved)) {
    throw DataError("manifest entry '" + pair_id + "': " + what + " file not found: " + resolved);
  }
}

}  // namespace

std::vector<PairManifestEntry> load_manifest(const std::string& path) {
  csv::Table t = csv::read_file(path);
  if (t.header.size() != kManifestColumns.size()) {
    throw DataError("manifest " + path + ": expected " +
                    std::to_string(kManifestColumns.size()) + " columns, got " +
                    std::to_string(t.header.size()));
  }
  for (std::size_t i = 0; i < kManifestColumns.size(); ++i) {
    if (t.header[i] != kManifestColumns[i]) {
      throw DataError("manifest " + path + ": column " + std::to_string(i) + " must be '" +
                      kManifestColumns[i] + "', got '" + t.header[i] + "'");
    }
  }

  const std::string base_dir = fs::path(path).parent_path().string();
  std::vector<PairManifestEntry> entries;
  std::set<std::string> ids;
  for (const auto& row : t.rows) {
    if (row.size() != kManifestColumns.size()) {
      throw DataError("manifest " + path + ": malformed row with " +
                      std::to_string(row.size()) + " fields (pair_id '" +
                      (row.empty() ? std::string() : row[0]) + "')");
    }
    PairManifestEntry e;
    e.base_dir = base_dir;
    e.pair_id = row[0];
    e.patient_id = row[1];
    e.fixed_path = row[2];
    e.moving_path = row[3];
    e.fixed_mask_path = row[4];
    e.moving_mask_path = row[5];
    e.fixed_landmarks_path = row[6];
    e.moving_landmarks_path = row[7];
    if (e.pair_id.empty()) throw DataError("manifest " + path + ": empty pair_id");
    if (!ids.insert(e.pair_id).second) {
      throw DuplicatePairId("manifest " + path + ": duplicate pair_id '" + e.pair_id + "'");
    }
    if (e.patient_id.empty()) {
      throw DataError("manifest entry '" + e.pair_id + "': empty patient_id");
    }
    e.fixed_spacing_mm = parse_spacing(row[8], e.pair_id, "fixed");
    e.moving_spacing_mm = parse_spacing(row[9], e.pair_id, "moving");

    const bool any_box = !row[10].empty() || !row[11].empty() || !row[12].empty() ||
                         !row[13].empty();
    if (any_box) {
      BoxRoi box;
      try {
        box.x0 = std::stoi(row[10]);
        box.y0 = std::stoi(row[11]);
        box.x1 = std::stoi(row[12]);
        box.y1 = std::stoi(row[13]);
      } catch (const std::exception&) {
        throw DataError("manifest entry '" + e.pair_id + "': malformed box_roi");
      }
      if (!(box.x0 < box.x1 && box.y0 < box.y1) || box.x0 < 0 || box.y0 < 0) {
        throw DataError("manifest entry '" + e.pair_id + "': box_roi is not well-ordered");
      }
      e.box_roi = box;
    }

    require_file(e.resolve_path(e.fixed_path), e.pair_id, "fixed image");
    require_file(e.resolve_path(e.moving_path), e.pair_id, "moving image");
    if (!e.fixed_mask_path.empty())
      require_file(e.resolve_path(e.fixed_mask_path), e.pair_id, "fixed mask");
    if (!e.moving_mask_path.empty())
      require_file(e.resolve_path(e.moving_mask_path), e.pair_id, "moving mask");
    if (!e.fixed_landmarks_path.empty())
      require_file(e.resolve_path(e.fixed_landmarks_path), e.pair_id, "fixed landmarks");
    if (!e.moving_landmarks_path.empty())
      require_file(e.resolve_path(e.moving_landmarks_path), e.pair_id, "moving landmarks");

    entries.push_back(std::move(e));
  }
  return entries;
}

void save_manifest(const std::string& path, const std::vector<PairManifestEntry>& entries) {
  csv::Table t;
  t.header.assign(kManifestColumns.begin(), kManifestColumns.end());
  char buf[64];
  for (const auto& e : entries) {
    std::vector<std::string> row(kManifestColumns.size());
    row[0] = e.pair_id;
    row[1] = e.patient_id;
    row[2] = e.fixed_path;
    row[3] = e.moving_path;
    row[4] = e.fixed_mask_path;
    row[5] = e.moving_mask_path;
    row[6] = e.fixed_landmarks_path;
    row[7] = e.moving_landmarks_path;
    std::snprintf(buf, sizeof(buf), "%.17g", e.fixed_spacing_mm);
    row[8] = buf;
    std::snprintf(buf, sizeof(buf), "%.17g", e.moving_spacing_mm);
    row[9] = buf;
    if (e.box_roi) {
      row[10] = std::to_string(e.box_roi->x0);
      row[11] = std::to_string(e.box_roi->y0);
      row[12] = std::to_string(e.box_roi->x1);
      row[13] = std::to_string(e.box_roi->y1);
    }
    t.rows.push_back(std::move(row));
  }
  csv::write_file(path, t);
}

RegistrationPair load_pair(const PairManifestEntry& entry) {
  RegistrationPair pair;
  pair.meta = entry;

  pair.fixed = load_image(entry.resolve_path(entry.fixed_path), Modality::xray);
  pair.fixed.spacing_mm = {entry.fixed_spacing_mm, entry.fixed_spacing_mm};
  pair.moving = load_image(entry.resolve_path(entry.moving_path), Modality::histology);
  pair.moving.spacing_mm = {entry.moving_spacing_mm, entry.moving_spacing_mm};

  if (!entry.fixed_mask_path.empty()) {
    pair.fixed_mask = load_mask(entry.resolve_path(entry.fixed_mask_path));
    pair.fixed_mask->spacing_mm = pair.fixed.spacing_mm;
  }
  if (!entry.moving_mask_path.empty()) {
    pair.moving_mask = load_mask(entry.resolve_path(entry.moving_mask_path));
    pair.moving_mask->spacing_mm = pair.moving.spacing_mm;
  }

  if (entry.box_roi) {
    pair.fixed = extract_segment(pair.fixed, *entry.box_roi);
    if (pair.fixed_mask) pair.fixed_mask = extract_segment_mask(*pair.fixed_mask, *entry.box_roi);
  }

  if (!entry.fixed_landmarks_path.empty()) {
    pair.fixed_landmarks = read_landmarks(entry.resolve_path(entry.fixed_landmarks_path),
                                          pair.fixed.height, pair.fixed.width);
  }
  if (!entry.moving_landmarks_path.empty()) {
    pair.moving_landmarks = read_landmarks(entry.resolve_path(entry.moving_landmarks_path),
                                           pair.moving.height, pair.moving.width);
  }
  if (pair.fixed_mask &&
      (pair.fixed_mask->height != pair.fixed.height || pair.fixed_mask->width != pair.fixed.width)) {
    throw DataError("pair '" + entry.pair_id + "': fixed mask shape differs from fixed image");
  }
  if (pair.moving_mask && (pair.moving_mask->height != pair.moving.height ||
                           pair.moving_mask->width != pair.moving.width)) {
    throw DataError("pair '" + entry.pair_id + "': moving mask shape differs from moving image");
  }
  if (pair.fixed_landmarks && pair.moving_landmarks) {
    auto fixed_ids = pair.fixed_landmarks->ids;
    auto moving_ids = pair.moving_landmarks->ids;
    std::sort(fixed_ids.begin(), fixed_ids.end());
    std::sort(moving_ids.begin(), moving_ids.end());
    if (fixed_ids != moving_ids) {
      throw DataError("pair '" + entry.pair_id + "': landmark id sets do not match");
    }
  }
  return pair;
}

}  // namespace mmreg
