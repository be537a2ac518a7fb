#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmreg/checkpoint.hpp"
#include "mmreg/evaluate.hpp"
#include "mmreg/loss.hpp"
#include "mmreg/manifest.hpp"
#include "mmreg/model.hpp"
#include "mmreg/preprocess.hpp"
#include "mmreg/synth.hpp"

namespace mmreg {

struct TrainConfig {
  double lr = 1e-4;
  double lr_decay = 0.95;
  int lr_step = 1;  // epochs per decay step
  int batch_size = 64;
  int epochs = 50;
  double lambda_reg = kDefaultLambdaReg;
  int folds = 5;
  std::uint64_t seed = 0;
  int per_image = 4;          // synthetic samples per source image
  double val_fraction = 0.1;  // training patients held out for model selection
  double clip_norm = 10.0;    // global gradient-norm clip
  MmdKernel mmd_kernel = MmdKernel::linear;
  MmdSampling mmd_sampling = MmdSampling::fibers;
  bool keep_all_checkpoints = false;
  TransformSamplerConfig sampler;  // constraint box; its seed field is ignored

  void validate() const;
  double lr_at_epoch(int epoch) const;
};

struct FoldSplit {
  int fold_id = 0;
  std::vector<std::string> train_patient_ids;
  std::vector<std::string> test_patient_ids;
};

// Patient-disjoint k-fold partition: deterministic given seed, test sets
// pairwise disjoint and covering, fold sizes differing by at most one.
std::vector<FoldSplit> make_folds(const std::vector<std::string>& patient_ids, int k,
                                  std::uint64_t seed);

// Shuffled batches of the given item indices with both source modalities
// represented in every batch while both pools still hold items (the
// cross-distribution regularizer needs to see both within a batch).
std::vector<std::vector<int>> stratified_batches(const std::vector<Modality>& item_modality,
                                                 const std::vector<int>& item_idx, int batch_size,
                                                 Rng& rng);

struct EpochStats {
  int epoch = 0;
  LossBreakdown train_mean;
  double lr = 0.0;
  double val_corner_err_px = 0.0;
  double val_total_loss = 0.0;
};

struct BatchStats {
  int epoch = 0;
  int step = 0;
  LossBreakdown loss;
};

struct TrainResult {
  std::vector<EpochStats> history;
  std::vector<BatchStats> batch_log;
  std::string best_checkpoint_path;
  std::string last_checkpoint_path;
  int best_epoch = -1;
  std::string history_csv_path;
  std::string batches_csv_path;
};

// Mean corner-point displacement (pixels on the network grid) between a
// predicted transform and the recovery target of a synthetic sample, which
// is the inverse of its generating map.
double corner_error_px(const AffineParams& predicted, const AffineParams& gt_sampling_map,
                       int grid_size = kNetInputSize);
// The same with predicted = identity (the pre-registration baseline).
double corner_error_pre_px(const AffineParams& gt_sampling_map, int grid_size = kNetInputSize);

// Trains one fold on synthetic pairs generated from its training patients.
// Writes per-epoch history/batch CSVs and checkpoints (file names embed fold
// and epoch; non-best epoch files are pruned unless keep_all_checkpoints).
// Deterministic given (manifest, configs, seed).
TrainResult train_fold(const FoldSplit& fold, const std::vector<PairManifestEntry>& entries,
                       const NetworkConfig& net_cfg, const TrainConfig& train_cfg,
                       const std::string& out_dir);

struct FoldRunResult {
  FoldSplit split;
  TrainResult train;
  std::vector<EvalRecord> records;  // held-out real (cross-modal) pairs
};

// Full cross-validation: per-fold training followed by evaluation of the
// held-out patients' real pairs with the fold's best checkpoint. only_fold
// restricts the run to a single fold id (-1 runs all of them).
std::vector<FoldRunResult> run_cv(const std::vector<PairManifestEntry>& entries,
                                  const NetworkConfig& net_cfg, const TrainConfig& train_cfg,
                                  const std::string& out_dir, const std::string& method_tag,
                                  int only_fold = -1);

// Synthetic-recovery measurement: generates per_image held-out samples per
// source image of `entries`, registers each through the full pipeline and
// reports pre/post corner errors (capped at max_pairs samples).
struct SyntheticRecovery {
  std::vector<double> pre_px;
  std::vector<double> post_px;
  double median_ratio = 0.0;    // median(post) / median(pre)
  double frac_improved = 0.0;   // fraction with post < pre
};

SyntheticRecovery evaluate_synthetic_recovery(const RegistrationModel& model,
                                              const std::vector<PairManifestEntry>& entries,
                                              int per_image,
                                              const TransformSamplerConfig& sampler,
                                              std::uint64_t seed, int max_pairs);

}  // namespace mmreg
