#include "vemd/annotations.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "vemd/common.hpp"

namespace vemd {

using nlohmann::json;

int PersonLimbs::num_valid() const {
  return static_cast<int>(std::count(valid_mask.begin(), valid_mask.end(), 1));
}

torch::Tensor PersonLimbs::coords_tensor(torch::Dtype dtype) const {
  auto t = torch::zeros({num_limbs(), 4}, torch::kFloat64);
  auto acc = t.accessor<double, 2>();
  for (int k = 0; k < num_limbs(); ++k)
    for (int c = 0; c < 4; ++c) acc[k][c] = limbs[k][c];
  return t.to(dtype);
}

torch::Tensor PersonLimbs::mask_tensor(torch::Dtype dtype) const {
  auto t = torch::zeros({num_limbs()}, torch::kFloat64);
  auto acc = t.accessor<double, 1>();
  for (int k = 0; k < num_limbs(); ++k) acc[k] = valid_mask[k] ? 1.0 : 0.0;
  return t.to(dtype);
}

PersonLimbs keypoints_to_limbs(std::span<const Keypoint> keypoints, const Skeleton& skeleton,
                               double conf_threshold) {
  if (static_cast<int>(keypoints.size()) != skeleton.num_joints()) {
    throw FormatError("keypoints_to_limbs: got " + std::to_string(keypoints.size()) +
                      " keypoints for skeleton '" + skeleton.name + "' with " +
                      std::to_string(skeleton.num_joints()) + " joints");
  }
  PersonLimbs out;
  out.limbs.assign(skeleton.num_limbs(), {0.0, 0.0, 0.0, 0.0});
  out.valid_mask.assign(skeleton.num_limbs(), 0);
  for (int k = 0; k < skeleton.num_limbs(); ++k) {
    const auto& a = keypoints[skeleton.edges[k].first];
    const auto& b = keypoints[skeleton.edges[k].second];
    if (a.confidence >= conf_threshold && b.confidence >= conf_threshold) {
      out.limbs[k] = {std::clamp(a.x, 0.0, 1.0), std::clamp(a.y, 0.0, 1.0),
                      std::clamp(b.x, 0.0, 1.0), std::clamp(b.y, 0.0, 1.0)};
      out.valid_mask[k] = 1;
    }
  }
  return out;
}

PersonLimbs select_limbs(const PersonLimbs& person, std::span<const int> indices) {
  PersonLimbs out;
  out.limbs.reserve(indices.size());
  out.valid_mask.reserve(indices.size());
  for (int idx : indices) {
    if (idx < 0 || idx >= person.num_limbs()) throw ShapeError("select_limbs: index out of range");
    out.limbs.push_back(person.limbs[idx]);
    out.valid_mask.push_back(person.valid_mask[idx]);
  }
  return out;
}

torch::Tensor AdjacencyMatrix::to_tensor(torch::Dtype dtype) const {
  auto t = torch::zeros({size, size}, torch::kFloat64);
  auto acc = t.accessor<double, 2>();
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) acc[i][j] = at(i, j);
  return t.to(dtype);
}

AdjacencyMatrix build_adjacency(const Skeleton& skeleton) {
  const int n = skeleton.num_limbs();
  AdjacencyMatrix adj;
  adj.size = n;
  adj.data.assign(static_cast<size_t>(n) * n, 0);
  for (int i = 0; i < n; ++i) {
    auto [a, b] = skeleton.edges[i];
    for (int j = i + 1; j < n; ++j) {
      auto [c, d] = skeleton.edges[j];
      if (a == c || a == d || b == c || b == d) {
        adj.data[static_cast<size_t>(i) * n + j] = 1;
        adj.data[static_cast<size_t>(j) * n + i] = 1;
      }
    }
  }
  return adj;
}

namespace {

double point_segment_distance(double px, double py, double ax, double ay, double bx,
                              double by) {
  const double dx = bx - ax;
  const double dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp(((px - ax) * dx + (py - ay) * dy) / len2, 0.0, 1.0);
  const double qx = ax + t * dx - px;
  const double qy = ay + t * dy - py;
  return std::sqrt(qx * qx + qy * qy);
}

}  // namespace

torch::Tensor render_limb_heatmaps(std::span<const PersonLimbs> persons, int num_limbs,
                                   int height, int width, double sigma) {
  if (height <= 0 || width <= 0) throw ArgumentError("render_limb_heatmaps: empty resolution");
  if (!(sigma > 0.0)) throw ArgumentError("render_limb_heatmaps: sigma must be positive");
  auto maps = torch::zeros({num_limbs, height, width}, torch::kFloat64);
  auto acc = maps.accessor<double, 3>();
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (const auto& person : persons) {
    if (person.num_limbs() != num_limbs) {
      throw ShapeError("render_limb_heatmaps: person has " + std::to_string(person.num_limbs()) +
                       " limbs, expected " + std::to_string(num_limbs));
    }
    for (int k = 0; k < num_limbs; ++k) {
      if (!person.valid_mask[k]) continue;
      const auto& l = person.limbs[k];
      const double ax = l[0] * width, ay = l[1] * height;
      const double bx = l[2] * width, by = l[3] * height;
      for (int i = 0; i < height; ++i) {
        for (int j = 0; j < width; ++j) {
          const double d = point_segment_distance(j + 0.5, i + 0.5, ax, ay, bx, by);
          acc[k][i][j] = std::max(acc[k][i][j], std::exp(-d * d * inv));
        }
      }
    }
  }
  return maps.to(torch::kFloat32);
}

bool VideoAnnotation::has_any_person() const {
  for (const auto& f : frames) {
    for (const auto& p : f.persons_body)
      if (p.any_valid()) return true;
    for (const auto& p : f.persons_face)
      if (p.any_valid()) return true;
  }
  return false;
}

namespace {

json person_to_json(const PersonLimbs& p) {
  json limbs = json::array();
  for (const auto& l : p.limbs) limbs.push_back({l[0], l[1], l[2], l[3]});
  json mask = json::array();
  for (auto m : p.valid_mask) mask.push_back(m ? 1 : 0);
  return {{"limbs", std::move(limbs)}, {"mask", std::move(mask)}};
}

PersonLimbs person_from_json(const json& j) {
  PersonLimbs p;
  for (const auto& l : j.at("limbs")) {
    if (!l.is_array() || l.size() != 4) throw FormatError("limb must have 4 coordinates");
    std::array<double, 4> c{};
    for (int i = 0; i < 4; ++i) {
      c[i] = l[i].get<double>();
      if (!(c[i] >= 0.0 && c[i] <= 1.0)) throw FormatError("limb coordinate outside [0,1]");
    }
    p.limbs.push_back(c);
  }
  for (const auto& m : j.at("mask")) {
    int v = m.get<int>();
    if (v != 0 && v != 1) throw FormatError("mask entries must be 0 or 1");
    p.valid_mask.push_back(static_cast<std::uint8_t>(v));
  }
  if (p.valid_mask.size() != p.limbs.size()) throw FormatError("mask/limb count mismatch");
  return p;
}

std::vector<PersonLimbs> persons_from_json(const json& arr, int expected_limbs) {
  std::vector<PersonLimbs> out;
  for (const auto& j : arr) {
    out.push_back(person_from_json(j));
    if (out.back().num_limbs() != expected_limbs) {
      throw FormatError("person has " + std::to_string(out.back().num_limbs()) +
                        " limbs, skeleton expects " + std::to_string(expected_limbs));
    }
  }
  return out;
}

}  // namespace

json to_json(const VideoAnnotation& a) {
  json frames = json::array();
  for (const auto& f : a.frames) {
    json bodies = json::array();
    for (const auto& p : f.persons_body) bodies.push_back(person_to_json(p));
    json faces = json::array();
    for (const auto& p : f.persons_face) faces.push_back(person_to_json(p));
    frames.push_back(
        {{"frame_index", f.frame_index}, {"bodies", std::move(bodies)}, {"faces", std::move(faces)}});
  }
  return {{"video_id", a.video_id},
          {"body_skeleton", a.body_skeleton},
          {"face_skeleton", a.face_skeleton},
          {"frames", std::move(frames)}};
}

VideoAnnotation annotation_from_json(const json& doc) {
  try {
    VideoAnnotation a;
    a.video_id = doc.at("video_id").get<std::string>();
    a.body_skeleton = doc.value("body_skeleton", std::string(kBodySkeleton));
    a.face_skeleton = doc.value("face_skeleton", std::string(kFaceDenseSkeleton));
    const auto& reg = SkeletonRegistry::builtin();
    const int body_limbs = reg.get(a.body_skeleton).num_limbs();
    const int face_limbs = reg.get(a.face_skeleton).num_limbs();
    for (const auto& f : doc.at("frames")) {
      FrameAnnotation fa;
      fa.frame_index = f.at("frame_index").get<int>();
      fa.persons_body = persons_from_json(f.value("bodies", json::array()), body_limbs);
      fa.persons_face = persons_from_json(f.value("faces", json::array()), face_limbs);
      a.frames.push_back(std::move(fa));
    }
    return a;
  } catch (const json::exception& ex) {
    throw FormatError(std::string("annotation: ") + ex.what());
  }
}

void write_annotation(const VideoAnnotation& annotation, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write annotation " + path.string());
  out << to_json(annotation).dump() << '\n';
}

VideoAnnotation read_annotation(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotation " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& ex) {
    throw FormatError("annotation " + path.string() + ": " + ex.what());
  }
  return annotation_from_json(doc);
}

void Manifest::validate() const {
  std::set<std::string> ids;
  for (const auto& e : entries) {
    if (e.label < 0 || e.label >= static_cast<int>(class_names.size())) {
      throw FormatError("manifest entry '" + e.video_id + "' has label " +
                        std::to_string(e.label) + " outside the class list");
    }
    if (!ids.insert(e.video_id).second) {
      throw FormatError("duplicate video_id '" + e.video_id + "' in manifest");
    }
  }
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const auto& e : manifest.entries) {
    json j = {{"video_id", e.video_id},
              {"path", e.path},
              {"label", e.label},
              {"class_name", e.class_name.empty() ? manifest.class_names.at(e.label) : e.class_name},
              {"frame_count", e.frame_count},
              {"annotation_path", e.annotation_path}};
    out << j.dump() << '\n';
  }
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  Manifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = json::parse(line);
      ManifestEntry e;
      e.video_id = j.at("video_id").get<std::string>();
      e.path = j.value("path", std::string());
      e.label = j.at("label").get<int>();
      e.class_name = j.value("class_name", std::string());
      e.frame_count = j.value("frame_count", 0);
      e.annotation_path = j.value("annotation_path", std::string());
      if (e.label < 0) throw FormatError("negative label");
      if (static_cast<int>(m.class_names.size()) <= e.label) m.class_names.resize(e.label + 1);
      auto& slot = m.class_names[e.label];
      if (slot.empty()) {
        slot = e.class_name.empty() ? "class_" + std::to_string(e.label) : e.class_name;
      } else if (!e.class_name.empty() && slot != e.class_name) {
        throw FormatError("label " + std::to_string(e.label) + " named both '" + slot +
                          "' and '" + e.class_name + "'");
      }
      m.entries.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  m.validate();
  return m;
}

AnnotationSource annotations_on_disk(const std::filesystem::path& manifest_dir) {
  return [manifest_dir](const ManifestEntry& e) -> std::optional<VideoAnnotation> {
    auto p = manifest_dir / e.annotation_path;
    if (e.annotation_path.empty() || !std::filesystem::exists(p)) return std::nullopt;
    return read_annotation(p);
  };
}

std::string FilterReport::summary() const {
  char buf[64];
  if (dropped == 0) {
    std::snprintf(buf, sizeof buf, "%zu (0.00%%)", kept);
  } else {
    std::snprintf(buf, sizeof buf, "%zu (%.2f%%)", kept, drop_pct);
  }
  return buf;
}

FilterResult filter_manifest(const Manifest& manifest, const AnnotationSource& source) {
  FilterResult result;
  result.manifest.class_names = manifest.class_names;
  auto& report = result.report;
  report.original = manifest.entries.size();
  for (const auto& e : manifest.entries) {
    auto ann = source(e);
    if (!ann) {
      report.drops.emplace_back(e.video_id, "missing annotation file");
    } else if (!ann->has_any_person()) {
      report.drops.emplace_back(e.video_id, "no structural detection in any frame");
    } else {
      result.manifest.entries.push_back(e);
    }
  }
  report.kept = result.manifest.entries.size();
  report.dropped = report.original - report.kept;
  report.drop_pct = report.original == 0
                        ? 0.0
                        : -100.0 * static_cast<double>(report.dropped) /
                              static_cast<double>(report.original);
  return result;
}

ManifestStats manifest_stats(const Manifest& manifest, const AnnotationSource& source) {
  ManifestStats stats;
  stats.per_class.assign(manifest.class_names.size(), 0);
  for (const auto& e : manifest.entries) {
    if (e.label >= 0 && e.label < static_cast<int>(stats.per_class.size())) ++stats.per_class[e.label];
    auto ann = source(e);
    if (!ann) throw IoError("annotation for '" + e.video_id + "' is not readable");
    for (const auto& f : ann->frames) {
      stats.max_bodies_per_frame =
          std::max(stats.max_bodies_per_frame, static_cast<int>(f.persons_body.size()));
      stats.max_faces_per_frame =
          std::max(stats.max_faces_per_frame, static_cast<int>(f.persons_face.size()));
    }
  }
  return stats;
}

}  // namespace vemd
