#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "vemd/annotations.hpp"

namespace vemd {

// Uniformly spaced frame indices: round(linspace(0, F-1, T)).
std::vector<int> sample_frames(int frame_count, int target);

struct VideoSample {
  std::string video_id;
  int label = 0;
  torch::Tensor frames;  // (T, 3, H, W) float32
  std::vector<FrameAnnotation> annotations;  // one per sampled frame
};

struct VideoSet {
  std::vector<VideoSample> videos;
  std::vector<std::string> class_names;
  int max_bodies = 0;
  int max_faces = 0;
  FilterReport filter;

  int num_classes() const { return static_cast<int>(class_names.size()); }
};

// Reads a manifest, drops entries without structural annotations, and loads
// `frames_per_video` uniformly sampled frames per video (first `limit`
// entries when limit > 0).
VideoSet load_video_set(const std::filesystem::path& manifest_path, int frames_per_video, int limit = 0);

}  // namespace vemd
