#include "commands.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "mmreg/checkpoint.hpp"
#include "mmreg/csv.hpp"
#include "mmreg/error.hpp"
#include "mmreg/evaluate.hpp"
#include "mmreg/image_io.hpp"
#include "mmreg/manifest.hpp"
#include "mmreg/preprocess.hpp"
#include "mmreg/synth.hpp"
#include "mmreg/trainer.hpp"
#include "version.hpp"

namespace fs = std::filesystem;

namespace mmreg::cli {

namespace {

// Options shared by the training-shaped commands; every default matches the
// published recipe where one exists (alpha 0.1, lambda 0.01, lr 1e-4, decay
// 0.95 step 1, batch 64, 50 epochs, 5 folds, the synthetic constraint box).
struct RunOptions {
  std::string manifest;
  std::string out_dir = "mmreg_out";
  std::uint64_t seed = 0;

  std::string backbone = "vgg16_block4";
  bool freeze_backbone = false;  // default: final backbone conv trainable
  double alpha = 0.1;
  std::string correlation_mode = "pearson";

  TrainConfig train;
  std::string method_tag = "mmreg";
  int fold = -1;

  NetworkConfig network_config() const {
    NetworkConfig cfg;
    cfg.backbone = backbone_from_string(backbone);
    cfg.fine_tune_last = !freeze_backbone;
    cfg.alpha = alpha;
    if (correlation_mode == "pearson") {
      cfg.correlation_mode = nn::CorrelationMode::pearson;
    } else if (correlation_mode == "cosine") {
      cfg.correlation_mode = nn::CorrelationMode::cosine;
    } else {
      throw ConfigError("unknown correlation mode '" + correlation_mode + "'");
    }
    return cfg;
  }
};

void add_sampler_options(CLI::App* cmd, TransformSamplerConfig& s) {
  cmd->add_option("--rotation-deg-min", s.rotation_deg_min, "Min rotation (degrees)")
      ->capture_default_str();
  cmd->add_option("--rotation-deg-max", s.rotation_deg_max, "Max rotation (degrees)")
      ->capture_default_str();
  cmd->add_option("--scale-min", s.scale_min, "Min scale factor")->capture_default_str();
  cmd->add_option("--scale-max", s.scale_max, "Max scale factor")->capture_default_str();
  cmd->add_option("--translation-frac", s.translation_frac,
                  "Max |translation| as fraction of image size")
      ->capture_default_str();
  cmd->add_option("--shear-frac", s.shear_frac, "Max shear coefficient")->capture_default_str();
}

void add_network_options(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("--backbone", o.backbone,
                  "Feature extractor: vgg16_block4, resnet101_stage, radresnet50_stage")
      ->capture_default_str();
  cmd->add_flag("--freeze-backbone", o.freeze_backbone,
                "Freeze the whole backbone (default fine-tunes its final conv)");
  cmd->add_option("--alpha", o.alpha, "Identity-anchoring scale on the estimated parameters")
      ->capture_default_str();
  cmd->add_option("--correlation-mode", o.correlation_mode, "pearson or cosine")
      ->capture_default_str();
}

void add_train_options(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("--lr", o.train.lr, "Initial learning rate")->capture_default_str();
  cmd->add_option("--lr-decay", o.train.lr_decay, "Learning-rate decay per step")
      ->capture_default_str();
  cmd->add_option("--lr-step", o.train.lr_step, "Epochs per decay step")->capture_default_str();
  cmd->add_option("--batch-size", o.train.batch_size, "Batch size")->capture_default_str();
  cmd->add_option("--epochs", o.train.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--lambda", o.train.lambda_reg,
                  "Weight of the distribution-distance regularizer")
      ->capture_default_str();
  cmd->add_option("--folds", o.train.folds, "Cross-validation folds")->capture_default_str();
  cmd->add_option("--per-image", o.train.per_image, "Synthetic samples per source image")
      ->capture_default_str();
  cmd->add_option("--val-fraction", o.train.val_fraction,
                  "Fraction of training patients held out for model selection")
      ->capture_default_str();
  cmd->add_option("--clip-norm", o.train.clip_norm, "Global gradient-norm clip (0 disables)")
      ->capture_default_str();
  cmd->add_option("--mmd-kernel", [&o](const std::vector<std::string>& v) {
        if (v[0] == "linear") o.train.mmd_kernel = MmdKernel::linear;
        else if (v[0] == "rbf") o.train.mmd_kernel = MmdKernel::rbf;
        else return false;
        return true;
      }, "MMD kernel: linear or rbf")->default_str("linear");
  cmd->add_option("--mmd-sampling", [&o](const std::vector<std::string>& v) {
        if (v[0] == "fibers") o.train.mmd_sampling = MmdSampling::fibers;
        else if (v[0] == "pooled") o.train.mmd_sampling = MmdSampling::pooled;
        else return false;
        return true;
      }, "MMD samples: fibers (per location) or pooled (per image)")->default_str("fibers");
  cmd->add_flag("--keep-all-checkpoints", o.train.keep_all_checkpoints,
                "Keep every epoch checkpoint instead of best+last");
}

void add_common(CLI::App* cmd, RunOptions& o, bool manifest_required = true) {
  auto* m = cmd->add_option("--manifest", o.manifest, "Dataset manifest CSV");
  if (manifest_required) m->required();
  cmd->add_option("--out", o.out_dir, "Output directory")->capture_default_str();
  cmd->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  cmd->set_config("--config", "", "INI config file (flag > file > default)");
}

// Every output directory is self-describing: the effective (merged) config,
// the seed, and the format versions land next to the results.
void freeze_config(CLI::App* cmd, const RunOptions& o) {
  fs::create_directories(o.out_dir);
  std::ofstream out(fs::path(o.out_dir) / "effective_config.ini");
  out << "# mmreg " << kVersion << " frozen effective configuration\n";
  out << "# command: " << cmd->get_name() << "\n";
  out << "# checkpoint_format_version: " << kCheckpointFormatVersion << "\n";
  out << "# results_csv_schema: pair_id,method_tag,n_landmarks,mle_pre_mm,mle_mm,exec_seconds,"
         "theta0..theta5\n";
  out << cmd->config_to_str(/*default_also=*/true, /*write_description=*/false);
}

int cmd_synth(CLI::App* cmd, RunOptions& o) {
  freeze_config(cmd, o);
  auto entries = load_manifest(o.manifest);
  TransformSamplerConfig sampler = o.train.sampler;
  sampler.seed = mix_seed(o.seed, stable_hash("synth"));
  sampler.validate();
  std::cout << "sampling constraints: rotation [" << sampler.rotation_deg_min << ", "
            << sampler.rotation_deg_max << "] deg, scale [" << sampler.scale_min << ", "
            << sampler.scale_max << "], translation " << sampler.translation_frac * 100.0
            << "% of image size, shear " << sampler.shear_frac * 100.0 << "%\n";
  const fs::path sample_root = fs::path(o.out_dir) / "samples";
  int count = 0;
  build_training_set(entries, o.train.per_image, sampler, [&](SyntheticSample&& s) {
    const std::string dir = (sample_root / (s.source_pair_id + "_" +
                                            to_string(s.source_modality) + "_" +
                                            std::to_string(s.sample_index)))
                                .string();
    write_sample_dir(dir, s);
    ++count;
  });
  std::cout << "wrote " << count << " synthetic samples (" << o.train.per_image
            << " per source image, " << entries.size() << " manifest entries, both modalities) to "
            << sample_root.string() << "\n";
  return 0;
}

int cmd_train(CLI::App* cmd, RunOptions& o) {
  freeze_config(cmd, o);
  auto entries = load_manifest(o.manifest);
  o.train.seed = o.seed;
  const NetworkConfig net_cfg = o.network_config();
  if (o.train.lambda_reg == 0.0) {
    std::cout << "lambda = 0: training without domain adaptation (regularizer logged, "
                 "excluded from the total)\n";
  }
  auto results = run_cv(entries, net_cfg, o.train, o.out_dir, o.method_tag, o.fold);
  for (const auto& fr : results) {
    std::cout << "fold " << fr.split.fold_id << ": best epoch " << fr.train.best_epoch
              << ", best checkpoint " << fr.train.best_checkpoint_path << ", "
              << fr.records.size() << " evaluated test pairs\n";
  }
  std::cout << "history/batches/records CSVs under " << o.out_dir << "\n";
  return 0;
}

int cmd_register(CLI::App* cmd, RunOptions& o, const std::string& checkpoint,
                 const std::string& only_pair) {
  freeze_config(cmd, o);
  auto model = load_checkpoint(checkpoint);
  auto entries = load_manifest(o.manifest);
  csv::Table thetas;
  thetas.header = {"pair_id", "prepare_seconds", "network_seconds", "exec_seconds",
                   "theta0", "theta1", "theta2", "theta3", "theta4", "theta5"};
  int done = 0;
  for (const auto& e : entries) {
    if (!only_pair.empty() && e.pair_id != only_pair) continue;
    RegistrationPair pair = load_pair(e);
    RegisterResult reg = model->register_pair(pair);
    char buf[64];
    std::vector<std::string> row = {e.pair_id};
    auto num = [&](double v) {
      std::snprintf(buf, sizeof(buf), "%.9g", v);
      return std::string(buf);
    };
    row.push_back(num(reg.timing.prepare_seconds));
    row.push_back(num(reg.timing.network_seconds));
    row.push_back(num(reg.timing.total()));
    for (int k = 0; k < 6; ++k) row.push_back(num(reg.theta.theta[k]));
    thetas.rows.push_back(row);

    // Warp the original-resolution moving data onto the fixed grid.
    GridImage warped = warp_image(pair.moving, reg.theta, pair.fixed.height, pair.fixed.width,
                                  Interp::bilinear);
    save_image_png((fs::path(o.out_dir) / (e.pair_id + "_warped.png")).string(), warped);
    if (pair.moving_mask) {
      BinaryMask wm = warp_mask(*pair.moving_mask, reg.theta, pair.fixed.height,
                                pair.fixed.width);
      save_mask_png((fs::path(o.out_dir) / (e.pair_id + "_warped_mask.png")).string(), wm);
    }
    if (pair.moving_landmarks) {
      const AffineParams inv = invert(reg.theta);
      LandmarkSet mapped;
      mapped.ids = pair.moving_landmarks->ids;
      for (const Vec2& q : pair.moving_landmarks->points) {
        const Vec2 qn = pixel_to_norm(q, pair.moving.height, pair.moving.width);
        mapped.points.push_back(norm_to_pixel(inv(qn), pair.fixed.height, pair.fixed.width));
      }
      write_landmarks((fs::path(o.out_dir) / (e.pair_id + "_mapped_landmarks.csv")).string(),
                      mapped);
    }
    ++done;
  }
  if (!only_pair.empty() && done == 0) {
    throw DataError("register: pair_id '" + only_pair + "' not found in manifest");
  }
  csv::write_file((fs::path(o.out_dir) / "thetas.csv").string(), thetas);
  std::cout << "registered " << done << " pairs; thetas.csv and warped outputs in " << o.out_dir
            << "\n";
  return 0;
}

int cmd_eval(CLI::App* cmd, RunOptions& o, const std::string& checkpoint, bool overlays) {
  freeze_config(cmd, o);
  auto model = load_checkpoint(checkpoint);
  auto entries = load_manifest(o.manifest);
  std::vector<EvalRecord> records;
  for (const auto& e : entries) {
    RegistrationPair pair = load_pair(e);
    if (!pair.fixed_landmarks || !pair.moving_landmarks) continue;
    RegisterResult reg = model->register_pair(pair);
    EvalRecord rec;
    rec.pair_id = e.pair_id;
    rec.method_tag = o.method_tag;
    rec.n_landmarks = static_cast<int>(pair.fixed_landmarks->size());
    rec.theta = reg.theta;
    rec.exec_seconds = reg.timing.total();
    rec.mle_mm = mean_landmark_error(*pair.fixed_landmarks, *pair.moving_landmarks, reg.theta,
                                     pair.fixed.spacing_mm, pair.fixed.height, pair.fixed.width,
                                     pair.moving.height, pair.moving.width);
    rec.mle_pre_mm = mean_landmark_error(*pair.fixed_landmarks, *pair.moving_landmarks,
                                         identity_params(), pair.fixed.spacing_mm,
                                         pair.fixed.height, pair.fixed.width, pair.moving.height,
                                         pair.moving.width);
    records.push_back(rec);

    if (overlays) {
      auto mapped = [&](const AffineParams& theta) {
        const AffineParams inv = invert(theta);
        LandmarkSet m;
        m.ids = pair.moving_landmarks->ids;
        for (const Vec2& q : pair.moving_landmarks->points) {
          const Vec2 qn = pixel_to_norm(q, pair.moving.height, pair.moving.width);
          m.points.push_back(norm_to_pixel(inv(qn), pair.fixed.height, pair.fixed.width));
        }
        return m;
      };
      render_overlay(pair.fixed, pair.moving, identity_params(), *pair.fixed_landmarks,
                     mapped(identity_params()),
                     (fs::path(o.out_dir) / (e.pair_id + "_overlay_pre.png")).string());
      render_overlay(pair.fixed, pair.moving, reg.theta, *pair.fixed_landmarks, mapped(reg.theta),
                     (fs::path(o.out_dir) / (e.pair_id + "_overlay_post.png")).string());
    }
  }
  if (records.empty()) throw DataError("eval: no manifest entries carry landmark pairs");
  write_records_csv((fs::path(o.out_dir) / "records.csv").string(), records);
  AggregateReport rep = aggregate_report(records);
  std::ofstream rpt(fs::path(o.out_dir) / "report.txt");
  rpt << rep.table_text;
  std::cout << rep.table_text;
  return 0;
}

int cmd_report(CLI::App* cmd, RunOptions& o, const std::vector<std::string>& results_files) {
  freeze_config(cmd, o);
  std::vector<EvalRecord> records;
  for (const auto& f : results_files) {
    auto part = read_records_csv(f);
    records.insert(records.end(), part.begin(), part.end());
  }
  if (records.empty()) throw DataError("report: no records in the given results files");
  AggregateReport rep = aggregate_report(records);

  csv::Table summary;
  summary.header = {"method_tag", "n_pairs", "mean_mle_mm", "std_mle_mm_population",
                    "mean_pre_mm", "mean_exec_seconds"};
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
  };
  for (const auto& m : rep.methods) {
    summary.rows.push_back({m.method_tag, std::to_string(m.n_pairs), num(m.mean_mle_mm),
                            num(m.std_mle_mm), num(m.mean_pre_mm), num(m.mean_exec_seconds)});
  }
  csv::write_file((fs::path(o.out_dir) / "summary.csv").string(), summary);

  csv::Table pmat;
  pmat.header = {"method_tag"};
  for (const auto& m : rep.methods) pmat.header.push_back(m.method_tag);
  for (std::size_t i = 0; i < rep.methods.size(); ++i) {
    std::vector<std::string> row = {rep.methods[i].method_tag};
    for (std::size_t j = 0; j < rep.methods.size(); ++j) row.push_back(num(rep.p_matrix[i][j]));
    pmat.rows.push_back(row);
  }
  csv::write_file((fs::path(o.out_dir) / "p_matrix.csv").string(), pmat);

  std::ofstream rpt(fs::path(o.out_dir) / "report.txt");
  rpt << rep.table_text;
  std::cout << rep.table_text;
  return 0;
}

int cmd_ablate(CLI::App* cmd, RunOptions& o, const std::vector<std::string>& backbones,
               const std::vector<std::string>& freeze_modes, const std::vector<double>& lambdas) {
  freeze_config(cmd, o);
  auto entries = load_manifest(o.manifest);

  struct AblationRow {
    std::string tag;
    double mean_mle = 0.0;
    int n = 0;
  };
  std::vector<AblationRow> rows;
  int run_index = 0;
  for (const auto& bk : backbones) {
    for (const auto& fm : freeze_modes) {
      if (fm != "finetune" && fm != "frozen") {
        throw ConfigError("ablate: freeze mode must be 'finetune' or 'frozen', got '" + fm + "'");
      }
      for (double lambda : lambdas) {
        RunOptions ro = o;
        ro.backbone = bk;
        ro.freeze_backbone = fm == "frozen";
        ro.train.lambda_reg = lambda;
        ro.train.seed = mix_seed(o.seed, stable_hash("ablate"), run_index);
        char tag[160];
        std::snprintf(tag, sizeof(tag), "%s_%s_lambda%g", bk.c_str(), fm.c_str(), lambda);
        ro.out_dir = (fs::path(o.out_dir) / tag).string();
        ro.method_tag = tag;
        fs::create_directories(ro.out_dir);
        std::cout << "=== ablation run " << run_index << ": " << tag
                  << (lambda == 0.0 ? " (no domain adaptation)" : "") << "\n";
        auto results = run_cv(entries, ro.network_config(), ro.train, ro.out_dir, tag, o.fold);
        AblationRow row;
        row.tag = tag;
        for (const auto& fr : results) {
          for (const auto& r : fr.records) {
            row.mean_mle += r.mle_mm;
            ++row.n;
          }
        }
        if (row.n > 0) row.mean_mle /= row.n;
        rows.push_back(row);
        ++run_index;
      }
    }
  }
  std::sort(rows.begin(), rows.end(),
            [](const AblationRow& a, const AblationRow& b) { return a.mean_mle < b.mean_mle; });
  csv::Table t;
  t.header = {"rank", "configuration", "mean_mle_mm", "n_pairs"};
  std::cout << "ablation ranking (by mean MLE):\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", rows[i].mean_mle);
    t.rows.push_back({std::to_string(i + 1), rows[i].tag, buf, std::to_string(rows[i].n)});
    std::cout << "  " << i + 1 << ". " << rows[i].tag << "  mean MLE " << buf << " mm over "
              << rows[i].n << " pairs\n";
  }
  csv::write_file((fs::path(o.out_dir) / "ablation_summary.csv").string(), t);
  return 0;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"mmreg: weakly supervised multi-modal affine image registration"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  RunOptions synth_o, train_o, reg_o, eval_o, report_o, ablate_o;
  std::string reg_checkpoint, eval_checkpoint, reg_pair;
  bool eval_overlays = false;
  std::vector<std::string> report_files;
  std::vector<std::string> ab_backbones = {"vgg16_block4"};
  std::vector<std::string> ab_freeze = {"finetune"};
  std::vector<double> ab_lambdas = {kDefaultLambdaReg};

  CLI::App* synth = app.add_subcommand("synth", "Materialize a synthetic sample cache");
  add_common(synth, synth_o);
  add_sampler_options(synth, synth_o.train.sampler);
  synth->add_option("--per-image", synth_o.train.per_image, "Samples per source image")
      ->capture_default_str();

  CLI::App* train = app.add_subcommand("train", "Train with patient-level cross-validation");
  add_common(train, train_o);
  add_network_options(train, train_o);
  add_train_options(train, train_o);
  add_sampler_options(train, train_o.train.sampler);
  train->add_option("--fold", train_o.fold, "Train a single fold id (-1 = all folds)")
      ->capture_default_str();
  train->add_option("--method-tag", train_o.method_tag, "Tag for result records")
      ->capture_default_str();

  CLI::App* reg = app.add_subcommand("register", "Batch inference: thetas + warped outputs");
  add_common(reg, reg_o);
  reg->add_option("--checkpoint", reg_checkpoint, "Trained model checkpoint")->required();
  reg->add_option("--pair", reg_pair, "Restrict to one pair_id");

  CLI::App* eval = app.add_subcommand("eval", "Landmark-error evaluation and report");
  add_common(eval, eval_o);
  eval->add_option("--checkpoint", eval_checkpoint, "Trained model checkpoint")->required();
  eval->add_flag("--overlays", eval_overlays, "Write pre/post overlay PNGs per pair");
  eval->add_option("--method-tag", eval_o.method_tag, "Tag for result records")
      ->capture_default_str();

  CLI::App* report = app.add_subcommand("report", "Merge result CSVs into a comparison report");
  add_common(report, report_o, /*manifest_required=*/false);
  report->add_option("--results", report_files, "Result CSV files (ours and external baselines)")
      ->required()
      ->delimiter(',');

  CLI::App* ablate = app.add_subcommand(
      "ablate", "Cross-product of backbones x freeze modes x lambdas, one training run each");
  add_common(ablate, ablate_o);
  add_network_options(ablate, ablate_o);
  add_train_options(ablate, ablate_o);
  add_sampler_options(ablate, ablate_o.train.sampler);
  ablate->add_option("--fold", ablate_o.fold, "Restrict each run to one fold id")
      ->capture_default_str();
  ablate->add_option("--backbones", ab_backbones, "Backbones to sweep")->delimiter(',')
      ->capture_default_str();
  ablate->add_option("--freeze-modes", ab_freeze, "finetune,frozen")->delimiter(',')
      ->capture_default_str();
  ablate->add_option("--lambdas", ab_lambdas, "Regularizer weights to sweep")->delimiter(',')
      ->capture_default_str();

  try {
    app.parse(argc, argv);
    if (synth->parsed()) return cmd_synth(synth, synth_o);
    if (train->parsed()) return cmd_train(train, train_o);
    if (reg->parsed()) return cmd_register(reg, reg_o, reg_checkpoint, reg_pair);
    if (eval->parsed()) return cmd_eval(eval, eval_o, eval_checkpoint, eval_overlays);
    if (report->parsed()) return cmd_report(report, report_o, report_files);
    if (ablate->parsed()) return cmd_ablate(ablate, ablate_o, ab_backbones, ab_freeze, ab_lambdas);
    return 0;
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ErrorCode::config);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorCode::runtime);
  }
}

}  // namespace mmreg::cli
