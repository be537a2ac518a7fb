#pragma once

#include <span>
#include <string>
#include <vector>

#include "mmreg/affine.hpp"
#include "mmreg/image.hpp"

namespace mmreg {

// One registered pair's physical-unit accuracy and cost: the atom of the
// results table.
struct EvalRecord {
  std::string pair_id;
  std::string method_tag;
  int n_landmarks = 0;
  double mle_pre_mm = 0.0;  // identity-transform baseline
  double mle_mm = 0.0;
  double exec_seconds = 0.0;
  AffineParams theta;
};

// Mean landmark error in millimetres: every moving landmark q is mapped into
// the fixed frame through the inverse of the backward sampling map theta
// (pixel -> normalized -> invert(theta) -> fixed pixel), then the distance
// to its fixed partner p converts to mm through the fixed image's spacing.
// Landmarks pair by id; the mean runs over all pairs.
double mean_landmark_error(const LandmarkSet& fixed_lms, const LandmarkSet& moving_lms,
                           const AffineParams& theta, Vec2 fixed_spacing_mm, int fixed_height,
                           int fixed_width, int moving_height, int moving_width);

// Mann-Whitney U (two-sided). Exact p by enumeration of all label
// assignments when n_a + n_b <= kMannWhitneyExactLimit, normal approximation
// with tie correction and continuity correction otherwise. U is reported for
// the first sample with midranks for ties.
struct MannWhitneyResult {
  double u = 0.0;
  double p = 1.0;
  bool exact = false;
};

inline constexpr int kMannWhitneyExactLimit = 16;
inline constexpr double kSignificanceThreshold = 0.01;  // reporting cutoff

// exact_limit overrides the enumeration cutover (0 forces the approximation).
MannWhitneyResult mann_whitney_u(std::span<const double> sample_a,
                                 std::span<const double> sample_b,
                                 int exact_limit = kMannWhitneyExactLimit);

// Writes a raster with the fixed image in grayscale, the warped moving image
// alpha-blended on top (transparency follows warped intensity, 0.5 max), and
// landmark pairs drawn with connecting segments. Deterministic bytes given
// identical inputs.
void render_overlay(const GridImage& fixed, const GridImage& moving, const AffineParams& theta,
                    const LandmarkSet& fixed_lms, const LandmarkSet& mapped_lms,
                    const std::string& out_path);

struct MethodSummary {
  std::string method_tag;
  int n_pairs = 0;
  double mean_mle_mm = 0.0;
  double std_mle_mm = 0.0;  // population convention
  double mean_pre_mm = 0.0;
  double mean_exec_seconds = 0.0;
};

struct AggregateReport {
  std::vector<MethodSummary> methods;
  // p_matrix[i][j]: two-sided Mann-Whitney p between methods i and j's MLE
  // samples (1.0 on the diagonal).
  std::vector<std::vector<double>> p_matrix;
  std::string table_text;  // human-readable rendering
};

AggregateReport aggregate_report(const std::vector<EvalRecord>& records);

// Results CSV schema: pair_id, method_tag, n_landmarks, mle_pre_mm, mle_mm,
// exec_seconds, theta (6 values). The same schema imports third-party
// baseline outputs.
void write_records_csv(const std::string& path, const std::vector<EvalRecord>& records);
std::vector<EvalRecord> read_records_csv(const std::string& path);

}  // namespace mmreg
