#include "mmreg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "mmreg/csv.hpp"
#include "mmreg/error.hpp"
#include "mmreg/evaluate.hpp"
#include "mmreg/preprocess.hpp"
#include "mmreg/warp_layer.hpp"

namespace fs = std::filesystem;

namespace mmreg {

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !(lr_decay > 0.0) || lr_step < 1) {
    throw ConfigError("train config: lr, lr_decay must be positive and lr_step >= 1");
  }
  if (batch_size < 1 || epochs < 1 || per_image < 1) {
    throw ConfigError("train config: batch_size, epochs and per_image must be >= 1");
  }
  if (folds < 2) throw ConfigError("train config: folds must be >= 2");
  if (lambda_reg < 0.0) throw ConfigError("train config: lambda_reg must be >= 0");
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw ConfigError("train config: val_fraction must lie in [0, 1)");
  }
  sampler.validate();
}

double TrainConfig::lr_at_epoch(int epoch) const {
  return lr * std::pow(lr_decay, static_cast<double>(epoch / lr_step));
}

std::vector<FoldSplit> make_folds(const std::vector<std::string>& patient_ids, int k,
                                  std::uint64_t seed) {
  if (k < 2) throw ConfigError("make_folds: k must be >= 2");
  std::set<std::string> unique(patient_ids.begin(), patient_ids.end());
  std::vector<std::string> patients(unique.begin(), unique.end());
  if (static_cast<int>(patients.size()) < k) {
    throw DataError("make_folds: need at least " + std::to_string(k) + " distinct patients, got " +
                    std::to_string(patients.size()));
  }
  Rng rng(mix_seed(seed, stable_hash("folds")));
  rng.shuffle(patients);
  std::vector<FoldSplit> folds(k);
  for (int f = 0; f < k; ++f) folds[f].fold_id = f;
  for (std::size_t i = 0; i < patients.size(); ++i) {
    folds[i % k].test_patient_ids.push_back(patients[i]);
  }
  for (int f = 0; f < k; ++f) {
    std::set<std::string> test(folds[f].test_patient_ids.begin(),
                               folds[f].test_patient_ids.end());
    for (const auto& p : patients) {
      if (!test.count(p)) folds[f].train_patient_ids.push_back(p);
    }
    std::sort(folds[f].train_patient_ids.begin(), folds[f].train_patient_ids.end());
    std::sort(folds[f].test_patient_ids.begin(), folds[f].test_patient_ids.end());
  }
  return folds;
}

std::vector<std::vector<int>> stratified_batches(const std::vector<Modality>& item_modality,
                                                 const std::vector<int>& item_idx, int batch_size,
                                                 Rng& rng) {
  std::vector<int> xray, hist;
  for (int i : item_idx) {
    (item_modality[i] == Modality::histology ? hist : xray).push_back(i);
  }
  rng.shuffle(xray);
  rng.shuffle(hist);
  std::vector<std::vector<int>> batches;
  std::size_t ix = 0, ih = 0;
  while (ix < xray.size() || ih < hist.size()) {
    const std::size_t rem_x = xray.size() - ix;
    const std::size_t rem_h = hist.size() - ih;
    const std::size_t want = std::min<std::size_t>(batch_size, rem_x + rem_h);
    std::size_t take_x;
    if (rem_x == 0) {
      take_x = 0;
    } else if (rem_h == 0) {
      take_x = want;
    } else {
      take_x = static_cast<std::size_t>(std::llround(
          static_cast<double>(want) * rem_x / static_cast<double>(rem_x + rem_h)));
      if (want >= 2) take_x = std::clamp<std::size_t>(take_x, 1, want - 1);
      take_x = std::min(take_x, rem_x);
      if (want - take_x > rem_h) take_x = want - rem_h;
    }
    std::vector<int> batch;
    for (std::size_t k = 0; k < take_x; ++k) batch.push_back(xray[ix++]);
    for (std::size_t k = 0; k < want - take_x; ++k) batch.push_back(hist[ih++]);
    batches.push_back(std::move(batch));
  }
  return batches;
}

double corner_error_px(const AffineParams& predicted, const AffineParams& gt_sampling_map,
                       int grid_size) {
  const AffineParams target = invert(gt_sampling_map);
  const double half = 0.5 * (grid_size - 1);
  const Vec2 corners[4] = {{-1.0, -1.0}, {1.0, -1.0}, {-1.0, 1.0}, {1.0, 1.0}};
  double acc = 0.0;
  for (const Vec2& c : corners) {
    const Vec2 a = predicted(c);
    const Vec2 b = target(c);
    const double dx = (a.x - b.x) * half;
    const double dy = (a.y - b.y) * half;
    acc += std::sqrt(dx * dx + dy * dy);
  }
  return acc / 4.0;
}

double corner_error_pre_px(const AffineParams& gt_sampling_map, int grid_size) {
  return corner_error_px(identity_params(), gt_sampling_map, grid_size);
}

namespace {

using nn::Tensorf;

// One prepared 224-grid image (a fixed source or one synthetic moving).
struct Slot {
  Branch role = Branch::fixed;
  Tensorf net;   // [1,3,224,224] standardized; released after feature caching
  Tensorf loss;  // [1,3,224,224] intensities in [0,1] (single-channel replicated)
  Tensorf mask;  // [1,1,224,224] tissue in {0,1}
  Tensorf feat;  // cached features (frozen trunk) or frozen-prefix output
};

struct Item {
  int fixed_slot = -1;
  int moving_slot = -1;
  AffineParams gt;
  Modality modality = Modality::synthetic;
  std::string patient_id;
  std::string source_pair_id;
};

Tensorf to_three_channel_tensor(const GridImage& img) {
  Tensorf t({1, 3, img.height, img.width});
  for (int c = 0; c < 3; ++c) {
    const int src = img.channels == 3 ? c : 0;
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) t(0, c, y, x) = img.at(y, x, src);
    }
  }
  return t;
}

Tensorf mask_to_tensor(const BinaryMask& mask) {
  Tensorf t({1, 1, mask.height, mask.width});
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) t(0, 0, y, x) = static_cast<float>(mask.at(y, x));
  }
  return t;
}

int add_slot(std::vector<Slot>& slots, Branch role, const GridImage& img_src,
             const BinaryMask& mask_src) {
  Slot s;
  s.role = role;
  GridImage img224 = resize_bilinear(img_src, kNetInputSize, kNetInputSize);
  BinaryMask mask224 = resize_nearest(mask_src, kNetInputSize, kNetInputSize);
  s.net = image_to_tensor(prepare_network_input(img224));
  s.loss = to_three_channel_tensor(img224);
  s.mask = mask_to_tensor(mask224);
  slots.push_back(std::move(s));
  return static_cast<int>(slots.size()) - 1;
}

Tensorf concat_batch(const std::vector<Slot>& slots, const std::vector<int>& idx,
                     Tensorf Slot::*field) {
  const Tensorf& first = slots[idx[0]].*field;
  std::vector<int> shape = first.shape();
  shape[0] = static_cast<int>(idx.size());
  Tensorf out(shape);
  const std::size_t per = first.size();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Tensorf& part = slots[idx[i]].*field;
    std::copy(part.data(), part.data() + per, out.data() + i * per);
  }
  return out;
}

Tensorf slice_sample(const Tensorf& batch, int b) {
  std::vector<int> shape = batch.shape();
  shape[0] = 1;
  Tensorf out(shape);
  const std::size_t per = out.size();
  std::copy(batch.data() + b * per, batch.data() + (b + 1) * per, out.data());
  return out;
}

void add_sample_grad(Tensorf& batch_grad, int b, const Tensorf& grad) {
  const std::size_t per = grad.size();
  float* dst = batch_grad.data() + b * per;
  for (std::size_t i = 0; i < per; ++i) dst[i] += grad[i];
}

std::vector<std::vector<int>> make_batches(const std::vector<Item>& items,
                                           const std::vector<int>& item_idx, int batch_size,
                                           Rng& rng) {
  std::vector<Modality> mods(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) mods[i] = items[i].modality;
  return stratified_batches(mods, item_idx, batch_size, rng);
}


struct BatchTensors {
  Tensorf feat_moving, feat_fixed;  // features or prefix outputs
  Tensorf moving_loss, fixed_loss;
  Tensorf moving_mask, fixed_mask;
};

BatchTensors gather_batch(const std::vector<Slot>& slots, const std::vector<Item>& items,
                          const std::vector<int>& batch) {
  std::vector<int> mov, fix;
  mov.reserve(batch.size());
  fix.reserve(batch.size());
  for (int i : batch) {
    mov.push_back(items[i].moving_slot);
    fix.push_back(items[i].fixed_slot);
  }
  BatchTensors t;
  t.feat_moving = concat_batch(slots, mov, &Slot::feat);
  t.feat_fixed = concat_batch(slots, fix, &Slot::feat);
  t.moving_loss = concat_batch(slots, mov, &Slot::loss);
  t.fixed_loss = concat_batch(slots, fix, &Slot::loss);
  t.moving_mask = concat_batch(slots, mov, &Slot::mask);
  t.fixed_mask = concat_batch(slots, fix, &Slot::mask);
  return t;
}


// Forward features for a gathered batch, running the trainable tail when the
// trunk is fine-tuned (slot.feat then holds the frozen-prefix output).
Tensorf features_for(const RegistrationModel& model, Branch role, const Tensorf& cached,
                     bool frozen_trunk, bool training) {
  if (frozen_trunk) return cached;
  const auto& branch = model.branch(role);
  return branch.forward_range(cached, branch.first_trainable_index(), branch.size(), training);
}

struct LossBatchResult {
  LossBreakdown loss;
  Tensorf d_theta;         // gradient of total w.r.t. theta (filled when backward)
  Tensorf d_feat_moving;   // MMD gradient into features
  Tensorf d_feat_fixed;
};

LossBatchResult compute_losses(const ModelForward& fwd, const BatchTensors& bt,
                               const TrainConfig& cfg, bool with_grads) {
  const int b = fwd.theta.dim(0);
  LossBatchResult out;

  Tensorf warped = nn::warp_batch(bt.moving_loss, fwd.theta, kNetInputSize, kNetInputSize);
  Tensorf warped_mask = nn::warp_batch(bt.moving_mask, fwd.theta, kNetInputSize, kNetInputSize);

  out.loss.intensity = nn::intensity_loss(bt.fixed_loss, warped);
  double dice_acc = 0.0;
  std::vector<Tensorf> fixed_mask_slices, warped_mask_slices;
  for (int i = 0; i < b; ++i) {
    Tensorf mf = slice_sample(bt.fixed_mask, i);
    Tensorf mw = slice_sample(warped_mask, i);
    dice_acc += nn::dice_loss(mf, mw);
    if (with_grads) {
      fixed_mask_slices.push_back(std::move(mf));
      warped_mask_slices.push_back(std::move(mw));
    }
  }
  out.loss.dice = dice_acc / b;

  Tensorf samples_m = cfg.mmd_sampling == MmdSampling::fibers
                          ? nn::feature_fibers(fwd.feat_moving)
                          : nn::feature_pooled(fwd.feat_moving);
  Tensorf samples_f = cfg.mmd_sampling == MmdSampling::fibers
                          ? nn::feature_fibers(fwd.feat_fixed)
                          : nn::feature_pooled(fwd.feat_fixed);
  out.loss.mmd = cfg.mmd_kernel == MmdKernel::linear ? nn::mmd_loss(samples_m, samples_f)
                                                     : nn::mmd_loss_rbf(samples_m, samples_f);
  out.loss.lambda_reg = cfg.lambda_reg;
  out.loss.total = out.loss.intensity + out.loss.dice + cfg.lambda_reg * out.loss.mmd;

  if (!with_grads) return out;

  // d total / d warped -> d theta (intensity term)
  Tensorf d_warped(warped.shape());
  nn::intensity_loss_backward(bt.fixed_loss, warped, 1.0, d_warped);
  out.d_theta = nn::warp_batch_backward_theta(bt.moving_loss, fwd.theta, kNetInputSize,
                                              kNetInputSize, d_warped);
  // dice term
  Tensorf d_warped_mask(warped_mask.shape());
  for (int i = 0; i < b; ++i) {
    Tensorf g(fixed_mask_slices[i].shape());
    nn::dice_loss_backward(fixed_mask_slices[i], warped_mask_slices[i], 1.0 / b, g);
    add_sample_grad(d_warped_mask, i, g);
  }
  Tensorf d_theta_dice = nn::warp_batch_backward_theta(bt.moving_mask, fwd.theta, kNetInputSize,
                                                       kNetInputSize, d_warped_mask);
  for (std::size_t i = 0; i < out.d_theta.size(); ++i) out.d_theta[i] += d_theta_dice[i];

  // regularizer term
  out.d_feat_moving = Tensorf(fwd.feat_moving.shape());
  out.d_feat_fixed = Tensorf(fwd.feat_fixed.shape());
  if (cfg.lambda_reg > 0.0) {
    Tensorf d_samples_m(samples_m.shape());
    Tensorf d_samples_f(samples_f.shape());
    if (cfg.mmd_kernel == MmdKernel::linear) {
      nn::mmd_loss_backward(samples_m, samples_f, cfg.lambda_reg, d_samples_m, d_samples_f);
    } else {
      nn::mmd_loss_rbf_backward(samples_m, samples_f, cfg.lambda_reg, d_samples_m, d_samples_f);
    }
    if (cfg.mmd_sampling == MmdSampling::fibers) {
      nn::feature_fibers_backward(d_samples_m, out.d_feat_moving);
      nn::feature_fibers_backward(d_samples_f, out.d_feat_fixed);
    } else {
      nn::feature_pooled_backward(d_samples_m, out.d_feat_moving);
      nn::feature_pooled_backward(d_samples_f, out.d_feat_fixed);
    }
  }
  return out;
}

std::string epoch_checkpoint_name(int fold_id, int epoch) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "fold%d_epoch%03d.ckpt", fold_id, epoch);
  return buf;
}

void write_history_csv(const std::string& path, const std::vector<EpochStats>& history) {
  csv::Table t;
  t.header = {"epoch", "loss_total", "loss_int", "loss_dice", "loss_mmd", "lr",
              "val_corner_err_px"};
  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
  };
  for (const auto& e : history) {
    t.rows.push_back({std::to_string(e.epoch), fmt(e.train_mean.total),
                      fmt(e.train_mean.intensity), fmt(e.train_mean.dice), fmt(e.train_mean.mmd),
                      fmt(e.lr), fmt(e.val_corner_err_px)});
  }
  csv::write_file(path, t);
}

void write_batches_csv(const std::string& path, const std::vector<BatchStats>& batches) {
  csv::Table t;
  t.header = {"epoch", "step", "loss_int", "loss_dice", "loss_mmd", "lambda", "loss_total"};
  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return std::string(buf);
  };
  for (const auto& b : batches) {
    t.rows.push_back({std::to_string(b.epoch), std::to_string(b.step), fmt(b.loss.intensity),
                      fmt(b.loss.dice), fmt(b.loss.mmd), fmt(b.loss.lambda_reg),
                      fmt(b.loss.total)});
  }
  csv::write_file(path, t);
}

}  // namespace

TrainResult train_fold(const FoldSplit& fold, const std::vector<PairManifestEntry>& entries,
                       const NetworkConfig& net_cfg, const TrainConfig& train_cfg,
                       const std::string& out_dir) {
  train_cfg.validate();
  fs::create_directories(out_dir);

  const std::set<std::string> train_patients(fold.train_patient_ids.begin(),
                                             fold.train_patient_ids.end());
  const std::set<std::string> test_patients(fold.test_patient_ids.begin(),
                                            fold.test_patient_ids.end());
  std::vector<PairManifestEntry> train_entries;
  for (const auto& e : entries) {
    if (train_patients.count(e.patient_id)) train_entries.push_back(e);
  }
  if (train_entries.empty()) {
    throw DataError("train_fold: no manifest entries for the training patients of fold " +
                    std::to_string(fold.fold_id));
  }

  // Build the synthetic sample pool at network resolution.
  std::vector<Slot> slots;
  std::vector<Item> items;
  std::map<std::string, int> source_slot_by_key;
  TransformSamplerConfig sampler = train_cfg.sampler;
  sampler.seed = mix_seed(train_cfg.seed, stable_hash("synth"));
  build_training_set(train_entries, train_cfg.per_image, sampler, [&](SyntheticSample&& s) {
    if (test_patients.count(s.patient_id)) {
      throw NumericError("train_fold: test-patient sample leaked into training pool");
    }
    const std::string key = s.source_pair_id + "|" + to_string(s.source_modality);
    auto it = source_slot_by_key.find(key);
    int fixed_slot;
    if (it == source_slot_by_key.end()) {
      fixed_slot = add_slot(slots, Branch::fixed, s.fixed, s.fixed_mask);
      source_slot_by_key.emplace(key, fixed_slot);
    } else {
      fixed_slot = it->second;
    }
    Item item;
    item.fixed_slot = fixed_slot;
    item.moving_slot = add_slot(slots, Branch::moving, s.moving, s.moving_mask);
    item.gt = s.gt_params;
    item.modality = s.source_modality;
    item.patient_id = s.patient_id;
    item.source_pair_id = s.source_pair_id;
    items.push_back(std::move(item));
  });

  // Hold out a validation slice of training patients for model selection.
  std::vector<std::string> tp(fold.train_patient_ids);
  Rng val_rng(mix_seed(train_cfg.seed, stable_hash("valsplit")));
  val_rng.shuffle(tp);
  std::size_t n_val = 0;
  if (train_cfg.val_fraction > 0.0 && tp.size() >= 2) {
    n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(
                                         train_cfg.val_fraction * static_cast<double>(tp.size()))));
    if (n_val >= tp.size()) n_val = tp.size() - 1;
  }
  const std::set<std::string> val_patients(tp.begin(), tp.begin() + static_cast<long>(n_val));

  std::vector<int> train_items, val_items;
  for (std::size_t i = 0; i < items.size(); ++i) {
    (val_patients.count(items[i].patient_id) ? val_items : train_items)
        .push_back(static_cast<int>(i));
  }
  if (train_items.empty()) throw DataError("train_fold: empty training side after the val split");
  if (val_items.empty()) val_items = train_items;  // degenerate desk-scale configs

  RegistrationModel model(net_cfg, mix_seed(train_cfg.seed, stable_hash("init")));
  const bool frozen_trunk =
      model.branch(Branch::moving).first_trainable_index() == model.branch(Branch::moving).size();

  // Cache what the frozen part of each trunk produces, per slot.
  for (auto& slot : slots) {
    const auto& branch = model.branch(slot.role);
    if (frozen_trunk) {
      slot.feat = branch.forward(slot.net, false);
    } else {
      slot.feat = branch.forward_range(slot.net, 0, branch.first_trainable_index(), false);
    }
    slot.net = Tensorf();  // standardized inputs are no longer needed
  }

  nn::AdamOptimizer<float> opt(model.trainable_params(), train_cfg.lr);

  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  std::string prev_epoch_path;
  const fs::path best_path = fs::path(out_dir) / ("fold" + std::to_string(fold.fold_id) +
                                                  "_best.ckpt");

  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    opt.set_lr(train_cfg.lr_at_epoch(epoch));
    Rng epoch_rng(mix_seed(train_cfg.seed, stable_hash("epoch"), epoch));
    const auto batches = make_batches(items, train_items, train_cfg.batch_size, epoch_rng);

    LossBreakdown epoch_mean;
    std::size_t seen = 0;
    for (std::size_t step = 0; step < batches.size(); ++step) {
      const auto& batch = batches[step];
      BatchTensors bt = gather_batch(slots, items, batch);
      ModelForward fwd = model.forward_from_features(
          features_for(model, Branch::moving, bt.feat_moving, frozen_trunk, true),
          features_for(model, Branch::fixed, bt.feat_fixed, frozen_trunk, true), true);
      LossBatchResult lr_batch = compute_losses(fwd, bt, train_cfg, /*with_grads=*/true);
      if (!std::isfinite(lr_batch.loss.total)) {
        throw NumericError("train_fold: non-finite loss at epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(step));
      }

      opt.zero_grad();
      model.backward(fwd, lr_batch.d_theta, &lr_batch.d_feat_moving, &lr_batch.d_feat_fixed,
                     /*backprop_into_backbone=*/!frozen_trunk);
      opt.step(train_cfg.clip_norm);

      result.batch_log.push_back({epoch, static_cast<int>(step), lr_batch.loss});
      const double w = static_cast<double>(batch.size());
      epoch_mean.intensity += lr_batch.loss.intensity * w;
      epoch_mean.dice += lr_batch.loss.dice * w;
      epoch_mean.mmd += lr_batch.loss.mmd * w;
      epoch_mean.total += lr_batch.loss.total * w;
      seen += batch.size();
    }
    epoch_mean.intensity /= static_cast<double>(seen);
    epoch_mean.dice /= static_cast<double>(seen);
    epoch_mean.mmd /= static_cast<double>(seen);
    epoch_mean.total /= static_cast<double>(seen);
    epoch_mean.lambda_reg = train_cfg.lambda_reg;

    // Validation: corner error and total loss in eval mode.
    double val_corner = 0.0;
    LossBreakdown val_mean;
    std::size_t val_seen = 0;
    Rng val_batch_rng(mix_seed(train_cfg.seed, stable_hash("valbatch"), epoch));
    for (const auto& batch : make_batches(items, val_items, train_cfg.batch_size, val_batch_rng)) {
      BatchTensors bt = gather_batch(slots, items, batch);
      ModelForward fwd = model.forward_from_features(
          features_for(model, Branch::moving, bt.feat_moving, frozen_trunk, false),
          features_for(model, Branch::fixed, bt.feat_fixed, frozen_trunk, false), false);
      LossBatchResult lv = compute_losses(fwd, bt, train_cfg, /*with_grads=*/false);
      for (std::size_t b = 0; b < batch.size(); ++b) {
        AffineParams pred;
        for (int k = 0; k < 6; ++k) pred.theta[k] = fwd.theta(static_cast<int>(b), k);
        val_corner += corner_error_px(pred, items[batch[b]].gt);
      }
      const double w = static_cast<double>(batch.size());
      val_mean.total += lv.loss.total * w;
      val_seen += batch.size();
    }
    val_corner /= static_cast<double>(val_seen);
    val_mean.total /= static_cast<double>(val_seen);

    EpochStats es;
    es.epoch = epoch;
    es.train_mean = epoch_mean;
    es.lr = train_cfg.lr_at_epoch(epoch);
    es.val_corner_err_px = val_corner;
    es.val_total_loss = val_mean.total;
    result.history.push_back(es);

    // Checkpoint this epoch; track the best val total loss monotonically.
    const std::string epoch_path =
        (fs::path(out_dir) / epoch_checkpoint_name(fold.fold_id, epoch)).string();
    CheckpointMeta meta;
    meta.seed = train_cfg.seed;
    meta.fold_id = fold.fold_id;
    meta.epoch = epoch;
    save_checkpoint(epoch_path, model, meta);
    if (val_mean.total < best_val) {
      best_val = val_mean.total;
      result.best_epoch = epoch;
      fs::copy_file(epoch_path, best_path, fs::copy_options::overwrite_existing);
    }
    if (!train_cfg.keep_all_checkpoints && !prev_epoch_path.empty()) {
      fs::remove(prev_epoch_path);
    }
    prev_epoch_path = epoch_path;
    result.last_checkpoint_path = epoch_path;
  }

  result.best_checkpoint_path = best_path.string();
  result.history_csv_path =
      (fs::path(out_dir) / ("fold" + std::to_string(fold.fold_id) + "_history.csv")).string();
  result.batches_csv_path =
      (fs::path(out_dir) / ("fold" + std::to_string(fold.fold_id) + "_batches.csv")).string();
  write_history_csv(result.history_csv_path, result.history);
  write_batches_csv(result.batches_csv_path, result.batch_log);
  return result;
}

std::vector<FoldRunResult> run_cv(const std::vector<PairManifestEntry>& entries,
                                  const NetworkConfig& net_cfg, const TrainConfig& train_cfg,
                                  const std::string& out_dir, const std::string& method_tag,
                                  int only_fold) {
  train_cfg.validate();
  std::vector<std::string> patients;
  for (const auto& e : entries) patients.push_back(e.patient_id);
  const auto folds = make_folds(patients, train_cfg.folds, train_cfg.seed);
  if (only_fold >= train_cfg.folds) {
    throw ConfigError("run_cv: fold " + std::to_string(only_fold) + " does not exist");
  }

  std::vector<FoldRunResult> out;
  std::vector<EvalRecord> merged;
  for (const auto& fold : folds) {
    if (only_fold >= 0 && fold.fold_id != only_fold) continue;
    FoldRunResult fr;
    fr.split = fold;
    fr.train = train_fold(fold, entries, net_cfg, train_cfg, out_dir);

    auto model = load_checkpoint(fr.train.best_checkpoint_path, nullptr, &net_cfg);
    const std::set<std::string> test_patients(fold.test_patient_ids.begin(),
                                              fold.test_patient_ids.end());
    for (const auto& e : entries) {
      if (!test_patients.count(e.patient_id)) continue;
      RegistrationPair pair = load_pair(e);
      RegisterResult reg = model->register_pair(pair);
      if (!pair.fixed_landmarks || !pair.moving_landmarks) continue;
      EvalRecord rec;
      rec.pair_id = e.pair_id;
      rec.method_tag = method_tag;
      rec.n_landmarks = static_cast<int>(pair.fixed_landmarks->size());
      rec.theta = reg.theta;
      rec.exec_seconds = reg.timing.total();
      rec.mle_mm = mean_landmark_error(*pair.fixed_landmarks, *pair.moving_landmarks, reg.theta,
                                       pair.fixed.spacing_mm, pair.fixed.height, pair.fixed.width,
                                       pair.moving.height, pair.moving.width);
      rec.mle_pre_mm = mean_landmark_error(*pair.fixed_landmarks, *pair.moving_landmarks,
                                           identity_params(), pair.fixed.spacing_mm,
                                           pair.fixed.height, pair.fixed.width,
                                           pair.moving.height, pair.moving.width);
      fr.records.push_back(rec);
    }
    write_records_csv(
        (fs::path(out_dir) / ("fold" + std::to_string(fold.fold_id) + "_records.csv")).string(),
        fr.records);
    merged.insert(merged.end(), fr.records.begin(), fr.records.end());
    out.push_back(std::move(fr));
  }
  write_records_csv((fs::path(out_dir) / "records.csv").string(), merged);
  if (!merged.empty()) {
    AggregateReport rep = aggregate_report(merged);
    std::ofstream rpt(fs::path(out_dir) / "report.txt");
    rpt << rep.table_text;
  }
  return out;
}

SyntheticRecovery evaluate_synthetic_recovery(const RegistrationModel& model,
                                              const std::vector<PairManifestEntry>& entries,
                                              int per_image,
                                              const TransformSamplerConfig& sampler,
                                              std::uint64_t seed, int max_pairs) {
  TransformSamplerConfig cfg = sampler;
  cfg.seed = seed;
  SyntheticRecovery out;
  build_training_set(entries, per_image, cfg, [&](SyntheticSample&& s) {
    if (static_cast<int>(out.pre_px.size()) >= max_pairs) return;
    RegistrationPair pair;
    pair.fixed = s.fixed;
    pair.moving = s.moving;
    pair.meta.pair_id = s.source_pair_id + "#" + std::to_string(s.sample_index);
    RegisterResult reg = model.register_pair(pair);
    out.pre_px.push_back(corner_error_pre_px(s.gt_params));
    out.post_px.push_back(corner_error_px(reg.theta, s.gt_params));
  });
  if (out.pre_px.empty()) throw DataError("evaluate_synthetic_recovery: no samples generated");

  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  const double pre_med = median(out.pre_px);
  out.median_ratio = pre_med > 0.0 ? median(out.post_px) / pre_med
                                   : std::numeric_limits<double>::infinity();
  std::size_t improved = 0;
  for (std::size_t i = 0; i < out.pre_px.size(); ++i) {
    if (out.post_px[i] < out.pre_px[i]) ++improved;
  }
  out.frac_improved = static_cast<double>(improved) / static_cast<double>(out.pre_px.size());
  return out;
}

}  // namespace mmreg
