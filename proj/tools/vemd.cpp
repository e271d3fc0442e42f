// vemd: datagen | train | eval | ablate | report | fuse
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vemd/ablation.hpp"
#include "vemd/common.hpp"
#include "vemd/config.hpp"
#include "vemd/datagen.hpp"
#include "vemd/fusion.hpp"
#include "vemd/multimodal.hpp"
#include "vemd/report.hpp"
#include "vemd/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kExitConfig = 2;

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw vemd::IoError("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw vemd::ConfigError(p.string() + ": " + e.what());
  }
}

void print_report(const vemd::EvalReport& r) {
  std::printf("accuracy %.4f  95%% CI [%.4f, %.4f]  weighted F1 %.4f  UAR %.4f  (n=%lld)\n", r.accuracy, r.ci.lo,
              r.ci.hi, r.weighted_f1, r.uar, static_cast<long long>(r.n));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"VE-MD group emotion recognition toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir, modalities;
  std::optional<std::uint64_t> seed;

  auto* datagen = app.add_subcommand("datagen", "generate a synthetic stick-figure dataset");
  int num_videos = -1;
  bool with_features = false;
  datagen->add_option("--config", config_path, "dataset config (JSON)");
  datagen->add_option("--seed", seed, "dataset seed");
  datagen->add_option("--out-dir", out_dir, "output directory")->required();
  datagen->add_option("--num-videos", num_videos, "override num_videos");
  datagen->add_flag("--with-features", with_features, "also write acoustic/content/text feature files");

  auto* train = app.add_subcommand("train", "train one experiment config");
  bool full_scale_lr = false;
  std::string dataset;
  train->add_option("--config", config_path, "experiment config (JSON)")->required();
  train->add_option("--seed", seed, "override the config seed");
  train->add_option("--out-dir", out_dir, "run directory")->required();
  train->add_option("--dataset", dataset, "override the dataset manifest");
  train->add_flag("--full-scale-lr", full_scale_lr, "use the full-scale learning rate (1e-7)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  std::string checkpoint;
  eval->add_option("--checkpoint", checkpoint, "model.pt")->required();
  eval->add_option("--dataset", dataset, "manifest.jsonl")->required();
  eval->add_option("--config", config_path, "reject checkpoints trained with a different config");
  eval->add_option("--out-dir", out_dir, "where to write predictions.jsonl and eval.json");

  auto* ablate = app.add_subcommand("ablate", "run an ablation grid");
  bool plan_only = false;
  std::string eval_dataset;
  int max_bodies = 0, max_faces = 0;
  ablate->add_option("--config", config_path, "grid (JSON)")->required();
  ablate->add_option("--seed", seed, "override the base seed");
  ablate->add_option("--out-dir", out_dir, "grid directory")->required();
  ablate->add_flag("--plan-only", plan_only, "expand and size the grid without training");
  ablate->add_option("--eval-dataset", eval_dataset, "manifest for the reported metrics");
  ablate->add_option("--max-bodies", max_bodies, "dataset maximum bodies per frame (plan-only Q_Max)");
  ablate->add_option("--max-faces", max_faces, "dataset maximum faces per frame (plan-only Q_Max)");

  auto* report = app.add_subcommand("report", "write plots and a markdown summary for a run");
  std::string run_dir;
  std::vector<std::string> compare;
  report->add_option("--run-dir", run_dir, "run or grid directory")->required();
  report->add_option("--out-dir", out_dir, "report directory (default: run dir)");
  report->add_option("--compare", compare, "two predictions.jsonl files for McNemar")->expected(2);
  report->add_option("--config", config_path, "unused; accepted for symmetry");

  auto* fuse = app.add_subcommand("fuse", "train the late-fusion head on precomputed features");
  fuse->add_option("--config", config_path, "fuse config (JSON)")->required();
  fuse->add_option("--seed", seed, "override the seed");
  fuse->add_option("--out-dir", out_dir, "output directory")->required();
  fuse->add_option("--modalities", modalities, "comma list of a,v,t");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*datagen) {
      vemd::DatasetConfig cfg;
      if (!config_path.empty()) cfg = vemd::dataset_config_from_json(read_json(config_path));
      if (seed) cfg.seed = *seed;
      if (num_videos >= 0) cfg.num_videos = num_videos;
      if (with_features) cfg.with_features = true;
      vemd::validate(cfg);
      auto m = vemd::generate_dataset(cfg, out_dir);
      std::printf("wrote %zu videos to %s\n", m.entries.size(), (fs::path(out_dir) / "manifest.jsonl").c_str());
    } else if (*train) {
      auto cfg = vemd::load_experiment(config_path);
      if (seed) cfg.seed = *seed;
      if (!dataset.empty()) cfg.dataset = dataset;
      if (full_scale_lr) cfg.optimizer.lr = vemd::kFullScaleLearningRate;
      cfg.validate();
      vemd::TrainOptions opts;
      opts.out_dir = out_dir;
      opts.log = &std::cout;
      auto r = vemd::train(cfg, opts);
      std::printf("train accuracy %.4f after %d epochs (%lld steps)\ncheckpoint %s (hash %s)\n", r.train_accuracy,
                  r.epochs_run, static_cast<long long>(r.steps), r.checkpoint.c_str(), r.checkpoint_hash.c_str());
    } else if (*eval) {
      std::optional<vemd::ExperimentConfig> expected;
      if (!config_path.empty()) expected = vemd::load_experiment(config_path);
      if (expected) vemd::load_checkpoint(checkpoint, expected);
      auto r = vemd::evaluate_checkpoint(checkpoint, dataset, out_dir);
      print_report(r.report);
    } else if (*ablate) {
      auto grid = vemd::load_grid(config_path);
      if (seed) grid.base["seed"] = *seed;
      auto configs = vemd::expand_grid(grid);
      vemd::AblationOptions opts;
      opts.out_dir = out_dir;
      opts.plan_only = plan_only;
      opts.eval_manifest = eval_dataset;
      opts.max_bodies = max_bodies;
      opts.max_faces = max_faces;
      opts.log = &std::cout;
      auto r = vemd::run_ablation(configs, opts);
      std::printf("%zu rows (%d resumed, %d duplicates) -> %s\n", r.rows.size(), r.resumed, r.duplicates,
                  (fs::path(out_dir) / "ablation.md").c_str());
    } else if (*report) {
      vemd::ReportInputs in;
      in.run_dir = run_dir;
      if (compare.size() == 2) {
        in.predictions_a = compare[0];
        in.predictions_b = compare[1];
      }
      for (const auto& f : vemd::write_report(in, out_dir.empty() ? run_dir : out_dir)) std::printf("%s\n", f.c_str());
    } else if (*fuse) {
      auto cfg = vemd::load_fuse_config(config_path);
      if (seed) cfg.seed = *seed;
      if (!modalities.empty()) {
        try {
          cfg.modalities = vemd::parse_modalities(modalities);
        } catch (const vemd::ArgumentError& e) {
          throw vemd::ConfigError(e.what());
        }
        cfg.validate();
      }
      auto r = vemd::run_fusion(cfg, out_dir, &std::cout);
      print_report(r.report);
    }
  } catch (const vemd::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const vemd::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
