#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "mmreg/csv.hpp"
#include "mmreg/error.hpp"
#include "mmreg/image_io.hpp"
#include "mmreg/trainer.hpp"
#include "support/oracles.hpp"
#include "support/tmpdir.hpp"

using namespace mmreg;

namespace {

std::string toy_manifest(const oracles::TmpDir& tmp, int entries, bool with_landmarks = false) {
  const std::string header =
      "pair_id,patient_id,fixed_path,moving_path,fixed_mask_path,moving_mask_path,"
      "fixed_landmarks_path,moving_landmarks_path,fixed_spacing_mm,moving_spacing_mm,"
      "box_x0,box_y0,box_x1,box_y1\n";
  std::ofstream m(tmp.file("manifest.csv"));
  m << header;
  for (int i = 0; i < entries; ++i) {
    Rng rng(9000 + i);
    const std::string f = "t" + std::to_string(i) + "_f.png";
    const std::string v = "t" + std::to_string(i) + "_m.png";
    GridImage fixed = oracles::gaussian_blur(oracles::random_image(64, 64, 1, rng), 1.5);
    save_image_png(tmp.file(f), fixed);
    save_image_png(tmp.file(v), oracles::gaussian_blur(oracles::random_image(64, 64, 3, rng), 1.5));
    std::string flm, mlm;
    if (with_landmarks) {
      flm = "t" + std::to_string(i) + "_fl.csv";
      mlm = "t" + std::to_string(i) + "_ml.csv";
      std::ofstream(tmp.file(flm)) << "id,x,y\nA,10,12\nB,40,30\nC,22,50\n";
      std::ofstream(tmp.file(mlm)) << "id,x,y\nA,12,12\nB,42,31\nC,20,49\n";
    }
    m << "pair" << i << ",patient" << i << "," << f << "," << v << ",,," << flm << "," << mlm
      << ",0.5,0.25,,,,\n";
  }
  m.close();
  return tmp.file("manifest.csv");
}

TrainConfig fast_config() {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.per_image = 2;
  cfg.batch_size = 8;
  cfg.folds = 2;
  cfg.seed = 1234;
  cfg.val_fraction = 0.0;
  return cfg;
}

NetworkConfig frozen_net() {
  NetworkConfig cfg;
  cfg.fine_tune_last = false;
  return cfg;
}

}  // namespace

TEST_CASE("make_folds: patient-disjoint cover with balanced sizes") {
  std::vector<std::string> five = {"a", "b", "c", "d", "e"};
  const auto folds5 = make_folds(five, 5, 7);
  REQUIRE(folds5.size() == 5);
  for (const auto& f : folds5) CHECK(f.test_patient_ids.size() == 1);

  std::vector<std::string> fifty;
  for (int i = 0; i < 50; ++i) fifty.push_back("p" + std::to_string(i));
  const auto folds = make_folds(fifty, 5, 7);
  std::set<std::string> seen;
  for (const auto& f : folds) {
    CHECK(f.test_patient_ids.size() == 10);
    CHECK(f.train_patient_ids.size() == 40);
    std::set<std::string> train(f.train_patient_ids.begin(), f.train_patient_ids.end());
    for (const auto& p : f.test_patient_ids) {
      CHECK(!train.count(p));           // patient-disjoint
      CHECK(seen.insert(p).second);     // test sets pairwise disjoint
    }
  }
  CHECK(seen.size() == 50);  // union covers all patients

  // deterministic given seed
  const auto again = make_folds(fifty, 5, 7);
  for (int f = 0; f < 5; ++f) CHECK(again[f].test_patient_ids == folds[f].test_patient_ids);
  const auto other = make_folds(fifty, 5, 8);
  bool differs = false;
  for (int f = 0; f < 5; ++f) differs |= other[f].test_patient_ids != folds[f].test_patient_ids;
  CHECK(differs);

  CHECK_THROWS_AS(make_folds({"a", "b"}, 5, 0), DataError);

  // sizes differ by at most one when patients don't divide evenly
  std::vector<std::string> seven = {"a", "b", "c", "d", "e", "f", "g"};
  const auto folds7 = make_folds(seven, 3, 1);
  std::size_t lo = 99, hi = 0;
  for (const auto& f : folds7) {
    lo = std::min(lo, f.test_patient_ids.size());
    hi = std::max(hi, f.test_patient_ids.size());
  }
  CHECK(hi - lo <= 1);
}

TEST_CASE("learning-rate schedule: lr(e) = lr0 * decay^e") {
  TrainConfig cfg;
  CHECK(cfg.lr_at_epoch(0) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(cfg.lr_at_epoch(1) == doctest::Approx(9.5e-5).epsilon(1e-12));
  CHECK(cfg.lr_at_epoch(10) == doctest::Approx(1e-4 * std::pow(0.95, 10)).epsilon(1e-12));
  CHECK(cfg.lr_at_epoch(10) == doctest::Approx(5.987e-5).epsilon(1e-3));
}

TEST_CASE("stratified batches mix modalities while both pools are non-empty") {
  std::vector<Modality> mods;
  std::vector<int> idx;
  for (int i = 0; i < 37; ++i) {
    mods.push_back(i % 3 == 0 ? Modality::histology : Modality::xray);
    idx.push_back(i);
  }
  Rng rng(11);
  const auto batches = stratified_batches(mods, idx, 8, rng);
  std::size_t total = 0;
  std::size_t remaining_x = 0, remaining_h = 0;
  for (int i : idx) (mods[i] == Modality::histology ? remaining_h : remaining_x)++;
  for (const auto& b : batches) {
    const bool both_pools_left = remaining_x > 0 && remaining_h > 0;
    int nx = 0, nh = 0;
    for (int i : b) (mods[i] == Modality::histology ? nh : nx)++;
    if (both_pools_left && b.size() >= 2) {
      CHECK(nx > 0);
      CHECK(nh > 0);
    }
    remaining_x -= nx;
    remaining_h -= nh;
    total += b.size();
    CHECK(b.size() <= 8);
  }
  CHECK(total == 37);
}

TEST_CASE("corner error helpers") {
  CHECK(corner_error_px(identity_params(), identity_params()) == doctest::Approx(0.0));

  AffineParams gt = identity_params();
  gt.theta[2] = 0.1;  // pure translation
  // target = inverse: translation -0.1; identity misses every corner by
  // 0.1 normalized units = 0.1 * 111.5 px
  CHECK(corner_error_pre_px(gt, 224) == doctest::Approx(0.1 * 111.5).epsilon(1e-9));
  CHECK(corner_error_px(invert(gt), gt) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("train_fold: batch accounting, history files, checkpoints") {
  oracles::TmpDir tmp("trainfold");
  const auto entries = load_manifest(toy_manifest(tmp, 3));
  FoldSplit fold;
  fold.fold_id = 0;
  fold.train_patient_ids = {"patient0", "patient1"};
  fold.test_patient_ids = {"patient2"};

  TrainConfig cfg = fast_config();
  cfg.epochs = 1;
  cfg.per_image = 2;   // 2 entries x 2 modalities x 2 = 8 training samples
  cfg.batch_size = 64; // partial final batch kept: exactly one step
  const TrainResult result = train_fold(fold, entries, frozen_net(), cfg, tmp.file("out"));

  REQUIRE(result.history.size() == 1);
  REQUIRE(result.batch_log.size() == 1);  // ceil(8 / 64) = 1 optimization step
  CHECK(result.batch_log[0].loss.total ==
        doctest::Approx(result.batch_log[0].loss.intensity + result.batch_log[0].loss.dice +
                        cfg.lambda_reg * result.batch_log[0].loss.mmd)
            .epsilon(1e-9));
  CHECK(std::filesystem::exists(result.best_checkpoint_path));
  CHECK(std::filesystem::exists(result.last_checkpoint_path));

  const csv::Table hist = csv::read_file(result.history_csv_path);
  const std::vector<std::string> expect_cols = {"epoch",     "loss_total", "loss_int",
                                                "loss_dice", "loss_mmd",   "lr",
                                                "val_corner_err_px"};
  CHECK(hist.header == expect_cols);
  REQUIRE(hist.rows.size() == 1);
  CHECK(std::stod(hist.rows[0][5]) == doctest::Approx(1e-4));
}

TEST_CASE("train_fold is reproducible bit-for-bit given the seed") {
  oracles::TmpDir tmp("repro");
  const auto entries = load_manifest(toy_manifest(tmp, 2));
  FoldSplit fold;
  fold.fold_id = 0;
  fold.train_patient_ids = {"patient0", "patient1"};

  const TrainConfig cfg = fast_config();
  const TrainResult a = train_fold(fold, entries, frozen_net(), cfg, tmp.file("a"));
  const TrainResult b = train_fold(fold, entries, frozen_net(), cfg, tmp.file("b"));
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train_mean.total == b.history[i].train_mean.total);
    CHECK(a.history[i].train_mean.intensity == b.history[i].train_mean.intensity);
    CHECK(a.history[i].train_mean.dice == b.history[i].train_mean.dice);
    CHECK(a.history[i].train_mean.mmd == b.history[i].train_mean.mmd);
    CHECK(a.history[i].val_corner_err_px == b.history[i].val_corner_err_px);
  }
}

TEST_CASE("training with the fine-tuned trunk moves the last backbone conv") {
  oracles::TmpDir tmp("finetune");
  const auto entries = load_manifest(toy_manifest(tmp, 2));
  FoldSplit fold;
  fold.fold_id = 0;
  fold.train_patient_ids = {"patient0", "patient1"};

  TrainConfig cfg = fast_config();
  cfg.epochs = 1;
  cfg.per_image = 1;
  cfg.lr = 1e-3;  // visible movement in one step
  NetworkConfig net;
  net.fine_tune_last = true;
  const TrainResult result = train_fold(fold, entries, net, cfg, tmp.file("out"));

  CheckpointMeta meta;
  auto trained = load_checkpoint(result.last_checkpoint_path, &meta);
  RegistrationModel fresh(net, trained->init_seed());
  auto trained_state = trained->state_tensors();
  auto fresh_state = fresh.state_tensors();
  double conv_delta = 0.0, frozen_delta = 0.0;
  for (std::size_t i = 0; i < trained_state.size(); ++i) {
    double d = 0.0;
    for (std::size_t k = 0; k < trained_state[i].tensor->size(); ++k) {
      d += std::abs((*trained_state[i].tensor)[k] - (*fresh_state[i].tensor)[k]);
    }
    // moving_branch.21 is the final backbone conv of the vgg trunk
    if (trained_state[i].name.find("branch.21.weight") != std::string::npos) {
      conv_delta += d;
    } else if (trained_state[i].name.find("branch.0.weight") != std::string::npos) {
      frozen_delta += d;
    }
  }
  CHECK(conv_delta > 0.0);
  CHECK(frozen_delta == 0.0);
}

TEST_CASE("run_cv partitions test pairs across folds and evaluates them") {
  oracles::TmpDir tmp("runcv");
  const auto entries = load_manifest(toy_manifest(tmp, 3, /*with_landmarks=*/true));
  TrainConfig cfg = fast_config();
  cfg.folds = 3;
  cfg.epochs = 1;
  cfg.per_image = 1;
  const auto results = run_cv(entries, frozen_net(), cfg, tmp.file("cv"), "mmreg");
  REQUIRE(results.size() == 3);
  std::set<std::string> evaluated;
  for (const auto& fr : results) {
    for (const auto& rec : fr.records) {
      CHECK(evaluated.insert(rec.pair_id).second);  // exactly one fold per pair
      CHECK(rec.n_landmarks == 3);
      CHECK(rec.mle_mm >= 0.0);
      CHECK(std::isfinite(rec.mle_pre_mm));
    }
  }
  CHECK(evaluated.size() == 3);
  CHECK(std::filesystem::exists(tmp.file("cv") + "/records.csv"));
  CHECK(std::filesystem::exists(tmp.file("cv") + "/report.txt"));
}

TEST_CASE("train_fold error paths") {
  oracles::TmpDir tmp("trainerr");
  const auto entries = load_manifest(toy_manifest(tmp, 2));
  FoldSplit fold;
  fold.fold_id = 0;
  fold.train_patient_ids = {"nonexistent"};
  CHECK_THROWS_AS(train_fold(fold, entries, frozen_net(), fast_config(), tmp.file("x")),
                  DataError);

  TrainConfig bad = fast_config();
  bad.folds = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = fast_config();
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
