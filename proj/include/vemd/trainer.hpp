#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vemd/config.hpp"
#include "vemd/dataset.hpp"
#include "vemd/metrics.hpp"
#include "vemd/model.hpp"

namespace vemd {

struct LossTraceRow {
  std::int64_t step = 0;
  double l_cls = 0.0;
  double l_p1 = 0.0;
  double l_p2 = 0.0;
  double l_mmd = 0.0;
  double total = 0.0;
};

void write_trace(const std::vector<LossTraceRow>& rows, const std::filesystem::path& path);
std::vector<LossTraceRow> read_trace(const std::filesystem::path& path);

struct TrainOptions {
  std::filesystem::path out_dir;  // empty = keep everything in memory
  std::ostream* log = nullptr;
};

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path trace_path;
  std::vector<LossTraceRow> trace;
  std::vector<double> epoch_accuracy;  // eval-mode training accuracy per epoch (when tracked)
  double train_accuracy = 0.0;
  int epochs_run = 0;
  std::int64_t steps = 0;
  std::int64_t match_overflows = 0;
  std::vector<int> queries;
  std::string checkpoint_hash;
  VeMd model{nullptr};
};

// Resolves the per-modality query counts from the dataset maxima.
std::vector<int> resolve_queries(const ExperimentConfig& cfg, int max_bodies, int max_faces);

TrainResult train(const ExperimentConfig& cfg, const TrainOptions& opts = {});
TrainResult train(const ExperimentConfig& cfg, const VideoSet& data, const TrainOptions& opts = {});

inline constexpr int kCheckpointFormat = 1;

void save_checkpoint(VeMd& model, const std::vector<std::string>& class_names, const std::filesystem::path& path);

struct LoadedModel {
  ExperimentConfig config;
  std::vector<std::string> class_names;
  VeMd model{nullptr};
};

// When `expected` is given, a checkpoint trained under a different config is rejected.
LoadedModel load_checkpoint(const std::filesystem::path& path,
                            const std::optional<ExperimentConfig>& expected = std::nullopt);

struct EvalResult {
  EvalReport report;
  std::vector<Prediction> predictions;
};

EvalResult evaluate(VeMd& model, const VideoSet& data, int batch_size = 8);
// Evaluates a checkpoint on a manifest; writes predictions.jsonl and eval.json to out_dir.
EvalResult evaluate_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                               const std::filesystem::path& out_dir);

}  // namespace vemd
