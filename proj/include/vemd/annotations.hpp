#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>
#include <torch/types.h>

#include "vemd/skeleton.hpp"

namespace vemd {

inline constexpr double kDefaultConfThreshold = 0.3;
inline constexpr double kDefaultHeatmapSigma = 2.0;
inline constexpr int kHeatmapSize = 56;

struct Keypoint {
  double x = 0.0;  // normalized by image width
  double y = 0.0;  // normalized by image height
  double confidence = 0.0;
};

// Limbs of one person instance: [x1, y1, x2, y2] per limb, normalized to [0,1].
// Invalid limbs keep zero coordinates.
struct PersonLimbs {
  std::vector<std::array<double, 4>> limbs;
  std::vector<std::uint8_t> valid_mask;

  int num_limbs() const { return static_cast<int>(limbs.size()); }
  int num_valid() const;
  bool any_valid() const { return num_valid() > 0; }

  // (num_limbs, 4) coordinates and (num_limbs,) mask as float tensors.
  torch::Tensor coords_tensor(torch::Dtype dtype = torch::kFloat32) const;
  torch::Tensor mask_tensor(torch::Dtype dtype = torch::kFloat32) const;

  bool operator==(const PersonLimbs&) const = default;
};

PersonLimbs keypoints_to_limbs(std::span<const Keypoint> keypoints, const Skeleton& skeleton,
                               double conf_threshold = kDefaultConfThreshold);

// Picks limbs by index, e.g. to move a face83 annotation onto the face20 skeleton.
PersonLimbs select_limbs(const PersonLimbs& person, std::span<const int> indices);

// Binary limb-to-limb connectivity: 1 iff two distinct limbs share a joint.
struct AdjacencyMatrix {
  int size = 0;
  std::vector<std::uint8_t> data;

  std::uint8_t at(int i, int j) const { return data[static_cast<size_t>(i) * size + j]; }
  torch::Tensor to_tensor(torch::Dtype dtype = torch::kFloat32) const;
};

AdjacencyMatrix build_adjacency(const Skeleton& skeleton);

// Dense limb targets: channel k is the per-pixel max over persons of
// exp(-d^2 / (2 sigma^2)), d the pixel-centre distance (in pixels) to limb k.
torch::Tensor render_limb_heatmaps(std::span<const PersonLimbs> persons, int num_limbs,
                                   int height = kHeatmapSize, int width = kHeatmapSize,
                                   double sigma = kDefaultHeatmapSigma);

struct FrameAnnotation {
  int frame_index = 0;
  std::vector<PersonLimbs> persons_body;
  std::vector<PersonLimbs> persons_face;

  bool operator==(const FrameAnnotation&) const = default;
};

// One annotation document per video.
struct VideoAnnotation {
  std::string video_id;
  std::string body_skeleton = kBodySkeleton;
  std::string face_skeleton = kFaceDenseSkeleton;
  std::vector<FrameAnnotation> frames;

  bool has_any_person() const;
  bool operator==(const VideoAnnotation&) const = default;
};

nlohmann::json to_json(const VideoAnnotation& annotation);
VideoAnnotation annotation_from_json(const nlohmann::json& doc);
void write_annotation(const VideoAnnotation& annotation, const std::filesystem::path& path);
VideoAnnotation read_annotation(const std::filesystem::path& path);

struct ManifestEntry {
  std::string video_id;
  std::string path;             // frames file, relative to the manifest directory
  int label = 0;
  std::string class_name;
  int frame_count = 0;
  std::string annotation_path;  // relative to the manifest directory

  bool operator==(const ManifestEntry&) const = default;
};

// JSON-lines on disk: one entry per line; class names are recovered from
// the (label, class_name) pairs.
struct Manifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_names;

  // Checks labels index into class_names and video ids are unique.
  void validate() const;
  bool operator==(const Manifest&) const = default;
};

void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

// Resolves an entry to its annotation; std::nullopt when the file is missing.
using AnnotationSource = std::function<std::optional<VideoAnnotation>(const ManifestEntry&)>;
AnnotationSource annotations_on_disk(const std::filesystem::path& manifest_dir);

struct FilterReport {
  std::size_t original = 0;
  std::size_t kept = 0;
  std::size_t dropped = 0;
  double drop_pct = 0.0;  // negative percentage, e.g. -2.62
  std::vector<std::pair<std::string, std::string>> drops;  // (video_id, reason)

  // "<kept> (<drop_pct>%)" with two decimals, e.g. "9558 (-2.62%)".
  std::string summary() const;
};

struct FilterResult {
  Manifest manifest;
  FilterReport report;
};

FilterResult filter_manifest(const Manifest& manifest, const AnnotationSource& source);

struct ManifestStats {
  int max_bodies_per_frame = 0;
  int max_faces_per_frame = 0;
  std::vector<std::size_t> per_class;
};

ManifestStats manifest_stats(const Manifest& manifest, const AnnotationSource& source);

}  // namespace vemd
