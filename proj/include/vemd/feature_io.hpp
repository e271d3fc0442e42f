#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/types.h>

namespace vemd {

// Modality names used in feature files. The CLI letters map as
// a -> acoustic (+ content when present), v -> video, t -> text.
inline constexpr const char* kAcoustic = "acoustic";
inline constexpr const char* kContent = "content";
inline constexpr const char* kText = "text";
inline constexpr const char* kVideo = "video";

struct FeatureRecord {
  std::string video_id;
  std::string modality;
  torch::Tensor sequence;  // (L, d) float32
};

// Container: "VEMDFEAT", uint32 header length, JSON header
// {video_id, modality, shape, dtype}, then little-endian float32 payload.
void write_feature_file(const FeatureRecord& record, const std::filesystem::path& path);
FeatureRecord read_feature_file(const std::filesystem::path& path);

struct FeatureIndexEntry {
  std::string video_id;
  std::string modality;
  std::string path;  // relative to the index directory
  int label = -1;

  bool operator==(const FeatureIndexEntry&) const = default;
};
using FeatureIndex = std::vector<FeatureIndexEntry>;

void write_feature_index(const FeatureIndex& index, const std::filesystem::path& path);
FeatureIndex read_feature_index(const std::filesystem::path& path);

// Class-correlated stand-ins for precomputed acoustic/content/text features.
// Writes <out_dir>/features/<video_id>.<modality>.feat for each modality.
FeatureIndex synthesize_features(const std::string& video_id, int label, int num_classes,
                                 int feature_dim, int text_feature_dim, std::uint64_t seed,
                                 const std::filesystem::path& out_dir);

}  // namespace vemd
