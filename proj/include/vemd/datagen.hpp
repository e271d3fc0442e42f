#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>
#include <torch/types.h>

#include "vemd/annotations.hpp"

namespace vemd {

inline constexpr int kDefaultFrames = 5;
inline constexpr int kImageSize = 224;

struct SceneSpec {
  int group_size = 1;
  // Optional per-frame override of group_size (length must equal frames).
  std::vector<int> per_frame_group_size;
  int emotion_class = 0;
  int num_classes = 3;
  int frames = kDefaultFrames;
  int height = kImageSize;
  int width = kImageSize;
  std::uint64_t rng_seed = 0;
};

struct Scene {
  torch::Tensor frames;  // (T, 3, H, W) float32 in [0,1], quantized to 1/255 steps
  std::vector<FrameAnnotation> annotations;
  int label = 0;
};

// Largest group the layout can place in an image of the given size.
int max_group_size(int height, int width);

// Deterministic stick-figure group scene. Each class has its own arm-elevation
// angle and mouth curvature; persons jitter slightly between frames.
Scene generate_scene(const SceneSpec& spec);

struct DatasetConfig {
  int num_videos = 30;
  int num_classes = 3;
  std::vector<double> class_balance;  // empty = uniform
  std::vector<std::string> class_names;  // empty = Positive/Neutral/Negative or class_k
  std::pair<int, int> group_size_range{1, 4};
  bool vary_group_per_frame = false;
  int frames = kDefaultFrames;
  int height = kImageSize;
  int width = kImageSize;
  std::uint64_t seed = 0;
  // Also emit class-correlated acoustic/content/text feature files.
  bool with_features = false;
  int feature_dim = 32;
  int text_feature_dim = 4096;
};

// Unknown keys are rejected with ConfigError.
DatasetConfig dataset_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DatasetConfig& config);
void validate(const DatasetConfig& config);

// Exact per-class counts for num_videos under class_balance (largest remainder).
std::vector<int> class_counts(const DatasetConfig& config);

// Writes videos/<id>.frames, annotations/<id>.json and manifest.jsonl under
// out_dir (plus features/ when requested). Returns the manifest.
Manifest generate_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);

// Packed frame file: "VEMDFRM1", int32 T,C,H,W (little endian), then uint8 data.
void write_frames(const torch::Tensor& frames, const std::filesystem::path& path);
torch::Tensor read_frames(const std::filesystem::path& path);

}  // namespace vemd
