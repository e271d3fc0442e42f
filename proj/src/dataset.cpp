#include "vemd/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "vemd/common.hpp"
#include "vemd/datagen.hpp"

namespace vemd {

std::vector<int> sample_frames(int frame_count, int target) {
  if (frame_count < 1 || target < 1) throw ArgumentError("sample_frames needs F >= 1 and T >= 1");
  std::vector<int> idx(target);
  for (int i = 0; i < target; ++i) {
    const double x = target == 1 ? 0.0 : static_cast<double>(i) * (frame_count - 1) / (target - 1);
    idx[i] = std::clamp(static_cast<int>(std::lround(x)), 0, frame_count - 1);
  }
  return idx;
}

VideoSet load_video_set(const std::filesystem::path& manifest_path, int frames_per_video, int limit) {
  const auto dir = manifest_path.parent_path();
  Manifest manifest = read_manifest(manifest_path);
  if (limit > 0 && static_cast<size_t>(limit) < manifest.entries.size()) manifest.entries.resize(limit);
  auto source = annotations_on_disk(dir);
  auto filtered = filter_manifest(manifest, source);
  VideoSet set;
  set.class_names = manifest.class_names;
  set.filter = filtered.report;
  const auto stats = manifest_stats(filtered.manifest, source);
  set.max_bodies = stats.max_bodies_per_frame;
  set.max_faces = stats.max_faces_per_frame;
  for (const auto& e : filtered.manifest.entries) {
    auto frames = read_frames(dir / e.path);
    auto ann = source(e);
    if (!ann) throw IoError("annotation vanished for " + e.video_id);
    const int f = static_cast<int>(frames.size(0));
    if (static_cast<int>(ann->frames.size()) != f) {
      throw FormatError(e.video_id + ": " + std::to_string(ann->frames.size()) + " annotated frames for " +
                        std::to_string(f) + " video frames");
    }
    VideoSample s;
    s.video_id = e.video_id;
    s.label = e.label;
    const auto idx = sample_frames(f, frames_per_video);
    std::vector<int64_t> idx64(idx.begin(), idx.end());
    s.frames = frames.index_select(0, torch::tensor(idx64, torch::kLong)).contiguous();
    for (int i : idx) s.annotations.push_back(ann->frames[i]);
    set.videos.push_back(std::move(s));
  }
  return set;
}

}  // namespace vemd
