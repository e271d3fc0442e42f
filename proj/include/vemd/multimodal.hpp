#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>
#include <torch/torch.h>

#include "vemd/fusion.hpp"
#include "vemd/metrics.hpp"

namespace vemd {

struct FuseConfig {
  std::string features;  // feature index (JSON-lines)
  std::vector<std::string> modalities{"acoustic", "content", "video", "text"};
  // Video sequences come from a frozen VE-MD checkpoint run over this manifest
  // when the index has no video features.
  std::string video_checkpoint;
  std::string manifest;
  int proj_dim = 64;
  int heads = 4;
  bool use_afg = false;
  bool cross_attention = true;
  bool freeze_video = true;
  int epochs = 30;
  int batch_size = 8;
  double lr = 1e-3;
  std::uint64_t seed = 0;

  void validate() const;
};

FuseConfig fuse_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FuseConfig& c);
// Relative paths resolve against the config file's directory.
FuseConfig load_fuse_config(const std::filesystem::path& path);

struct FusionSample {
  std::string video_id;
  int label = 0;
  std::map<std::string, torch::Tensor> sequences;  // modality -> (L, d)
};

// Gathers, per video, every requested modality (video ones from the
// checkpoint when needed). Videos missing a modality are skipped.
std::vector<FusionSample> load_fusion_samples(const FuseConfig& cfg, int* num_classes);

struct FuseResult {
  EvalReport report;
  std::vector<Prediction> predictions;
  std::vector<double> losses;  // per epoch
  LateFusion model{nullptr};
};

FuseResult run_fusion(const FuseConfig& cfg, const std::filesystem::path& out_dir, std::ostream* log = nullptr);

}  // namespace vemd
