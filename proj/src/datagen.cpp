#include "vemd/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "vemd/common.hpp"
#include "vemd/feature_io.hpp"

namespace vemd {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kMinCellWidth = 32;
constexpr int kMinCellHeight = 56;

struct Canvas {
  int height;
  int width;
  std::vector<float> data;  // (3, H, W)

  Canvas(int h, int w) : height(h), width(w), data(static_cast<size_t>(3) * h * w, 0.0f) {}

  float& at(int c, int y, int x) { return data[(static_cast<size_t>(c) * height + y) * width + x]; }

  void line(double ax, double ay, double bx, double by, double thickness,
            const std::array<float, 3>& color) {
    const double pad = thickness / 2.0 + 1.0;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(ax, bx) - pad)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(std::max(ax, bx) + pad)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(ay, by) - pad)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(std::max(ay, by) + pad)));
    const double dx = bx - ax, dy = by - ay;
    const double len2 = dx * dx + dy * dy;
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        double t = len2 > 0 ? std::clamp(((px - ax) * dx + (py - ay) * dy) / len2, 0.0, 1.0) : 0.0;
        const double qx = ax + t * dx - px, qy = ay + t * dy - py;
        const double d = std::sqrt(qx * qx + qy * qy);
        const double a = std::clamp(thickness / 2.0 + 0.5 - d, 0.0, 1.0);
        if (a <= 0.0) continue;
        for (int c = 0; c < 3; ++c) {
          float& v = at(c, y, x);
          v = static_cast<float>(v * (1.0 - a) + color[c] * a);
        }
      }
    }
  }
};

struct Cell {
  double x, y, w, h;
};

std::vector<Cell> layout(int n, int height, int width) {
  std::vector<Cell> cells;
  if (n <= 0) return cells;
  const int per_row_max = std::max(1, width / kMinCellWidth);
  const int rows_max = std::max(1, height / kMinCellHeight);
  int rows = 1;
  while (rows < rows_max && (n + rows - 1) / rows > per_row_max) ++rows;
  // Prefer near-square arrangements once more than a handful of persons share a row.
  while (rows < rows_max && (n + rows - 1) / rows > 3 * rows) ++rows;
  const int cols = (n + rows - 1) / rows;
  const double cw = static_cast<double>(width) / cols;
  const double ch = static_cast<double>(height) / rows;
  for (int i = 0; i < n; ++i) {
    cells.push_back({(i % cols) * cw, (i / cols) * ch, cw, ch});
  }
  return cells;
}

// Class-dependent signature parameters, linear in the class index.
double arm_elevation(int cls, int num_classes) {
  if (num_classes <= 1) return 0.0;
  return (70.0 - 140.0 * cls / (num_classes - 1)) * kPi / 180.0;
}

double mouth_curvature(int cls, int num_classes) {
  if (num_classes <= 1) return 0.0;
  return 0.18 * (1.0 - 2.0 * cls / (num_classes - 1.0));
}

struct PersonStyle {
  std::array<float, 3> body_color;
  std::array<float, 3> face_color;
  double scale_jitter;
};

struct Pose {
  std::vector<Keypoint> body;  // 17 COCO joints, pixel units until normalized
  std::vector<Keypoint> face;  // 68 landmarks
};

Pose make_pose(const Cell& cell, int cls, int num_classes, double scale, double dx, double dy,
               double dtheta) {
  Pose pose;
  const double ph = std::min(cell.h * 0.92, cell.w * 1.9) * scale;
  const double cx = cell.x + cell.w / 2.0 + dx;
  const double top = cell.y + (cell.h - ph) / 2.0 + dy;
  auto at = [&](double fx, double fy) { return Keypoint{cx + fx * ph, top + fy * ph, 1.0}; };

  const double r = 0.085 * ph;  // head radius
  const double hx = cx, hy = top + 0.11 * ph;
  const double theta = arm_elevation(cls, num_classes) + dtheta;
  const double upper = 0.17, fore = 0.15;
  const double sh = 0.13;  // half shoulder width
  const double bend = 0.35 * (theta > 0 ? 1.0 : -1.0) * std::min(1.0, std::abs(theta));

  pose.body.resize(17);
  pose.body[0] = {hx, hy + 0.1 * r, 1.0};
  pose.body[1] = {hx - 0.4 * r, hy - 0.2 * r, 1.0};
  pose.body[2] = {hx + 0.4 * r, hy - 0.2 * r, 1.0};
  pose.body[3] = {hx - 0.95 * r, hy, 1.0};
  pose.body[4] = {hx + 0.95 * r, hy, 1.0};
  pose.body[5] = at(-sh, 0.24);
  pose.body[6] = at(sh, 0.24);
  for (int side = 0; side < 2; ++side) {
    const double sgn = side == 0 ? -1.0 : 1.0;
    const auto& shoulder = pose.body[5 + side];
    Keypoint elbow{shoulder.x + sgn * upper * ph * std::cos(theta),
                   shoulder.y - upper * ph * std::sin(theta), 1.0};
    const double t2 = theta + bend;
    Keypoint wrist{elbow.x + sgn * fore * ph * std::cos(t2), elbow.y - fore * ph * std::sin(t2),
                   1.0};
    pose.body[7 + side] = elbow;
    pose.body[9 + side] = wrist;
  }
  pose.body[11] = at(-0.08, 0.55);
  pose.body[12] = at(0.08, 0.55);
  pose.body[13] = at(-0.09, 0.76);
  pose.body[14] = at(0.09, 0.76);
  pose.body[15] = at(-0.10, 0.97);
  pose.body[16] = at(0.10, 0.97);

  auto& f = pose.face;
  f.resize(68);
  for (int i = 0; i <= 16; ++i) {
    const double a = kPi * i / 16.0;
    f[i] = {hx - r * std::cos(a), hy + r * std::sin(a), 1.0};
  }
  const double curv = mouth_curvature(cls, num_classes);
  // Brows: inner ends drop for negative classes.
  for (int i = 0; i < 5; ++i) {
    const double u = i / 4.0;
    const double arch = -0.06 * r * std::sin(kPi * u);
    f[17 + i] = {hx - r * (0.75 - 0.6 * u), hy - 0.45 * r + arch - curv * r * 0.5 * u, 1.0};
    f[22 + i] = {hx + r * (0.15 + 0.6 * u), hy - 0.45 * r + arch - curv * r * 0.5 * (1 - u), 1.0};
  }
  for (int i = 0; i < 4; ++i) f[27 + i] = {hx, hy - 0.3 * r + 0.4 * r * i / 3.0, 1.0};
  for (int i = 0; i < 5; ++i) {
    const double u = i / 4.0;
    f[31 + i] = {hx - 0.2 * r + 0.4 * r * u, hy + 0.2 * r + 0.05 * r * std::sin(kPi * u), 1.0};
  }
  auto eye = [&](int base, double ex) {
    const double ey = hy - 0.2 * r, w = 0.15 * r, h = 0.07 * r;
    f[base + 0] = {ex - w, ey, 1.0};
    f[base + 1] = {ex - w / 3, ey - h, 1.0};
    f[base + 2] = {ex + w / 3, ey - h, 1.0};
    f[base + 3] = {ex + w, ey, 1.0};
    f[base + 4] = {ex + w / 3, ey + h, 1.0};
    f[base + 5] = {ex - w / 3, ey + h, 1.0};
  };
  eye(36, hx - 0.4 * r);
  eye(42, hx + 0.4 * r);
  const double my = hy + 0.55 * r, mw = 0.35 * r;
  // Outer lip: 48 left corner, 49..53 upper, 54 right corner, 55..59 lower.
  auto lip_y = [&](double u, double open) {
    // u in [-1,1]; corners lifted by curvature
    return my - curv * r * u * u + open;
  };
  f[48] = {hx - mw, lip_y(-1, 0), 1.0};
  for (int i = 1; i <= 5; ++i) {
    const double u = -1.0 + i / 3.0;
    f[48 + i] = {hx + mw * u, lip_y(u, -0.08 * r * (1 - u * u)), 1.0};
  }
  f[54] = {hx + mw, lip_y(1, 0), 1.0};
  for (int i = 1; i <= 5; ++i) {
    const double u = 1.0 - i / 3.0;
    f[54 + i] = {hx + mw * u, lip_y(u, 0.1 * r * (1 - u * u)), 1.0};
  }
  // Inner lip: 60 left, 61..63 upper, 64 right, 65..67 lower.
  const double iw = 0.7 * mw;
  f[60] = {hx - iw, lip_y(-0.7, 0), 1.0};
  for (int i = 1; i <= 3; ++i) {
    const double u = -0.7 + 1.4 * i / 4.0;
    f[60 + i] = {hx + mw * u, lip_y(u, -0.03 * r), 1.0};
  }
  f[64] = {hx + iw, lip_y(0.7, 0), 1.0};
  for (int i = 1; i <= 3; ++i) {
    const double u = 0.7 - 1.4 * i / 4.0;
    f[64 + i] = {hx + mw * u, lip_y(u, 0.04 * r), 1.0};
  }
  return pose;
}

void normalize(std::vector<Keypoint>& pts, int height, int width) {
  for (auto& p : pts) {
    p.x = std::clamp(p.x / width, 0.0, 1.0);
    p.y = std::clamp(p.y / height, 0.0, 1.0);
  }
}

}  // namespace

int max_group_size(int height, int width) {
  return std::max(1, width / kMinCellWidth) * std::max(1, height / kMinCellHeight);
}

Scene generate_scene(const SceneSpec& spec) {
  if (spec.frames < 1) throw ConfigError("scene needs at least one frame");
  if (spec.height < kMinCellHeight || spec.width < kMinCellWidth) {
    throw ConfigError("image size too small for scene rendering");
  }
  if (spec.num_classes < 1 || spec.emotion_class < 0 || spec.emotion_class >= spec.num_classes) {
    throw ConfigError("emotion_class outside [0, num_classes)");
  }
  if (!spec.per_frame_group_size.empty() &&
      static_cast<int>(spec.per_frame_group_size.size()) != spec.frames) {
    throw ConfigError("per_frame_group_size must list one size per frame");
  }
  const int limit = max_group_size(spec.height, spec.width);
  auto group_at = [&](int t) {
    return spec.per_frame_group_size.empty() ? spec.group_size : spec.per_frame_group_size[t];
  };
  int max_group = 0;
  for (int t = 0; t < spec.frames; ++t) {
    const int g = group_at(t);
    if (g < 0) throw ConfigError("group_size must be non-negative");
    if (g > limit) {
      throw ConfigError("group_size " + std::to_string(g) + " exceeds packing limit " +
                        std::to_string(limit) + " for " + std::to_string(spec.height) + "x" +
                        std::to_string(spec.width));
    }
    max_group = std::max(max_group, g);
  }

  std::mt19937_64 rng(spec.rng_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const float tint = static_cast<float>(uniform(0.08, 0.22));
  std::vector<PersonStyle> styles;
  for (int p = 0; p < max_group; ++p) {
    PersonStyle s;
    for (int c = 0; c < 3; ++c) {
      s.body_color[c] = static_cast<float>(uniform(0.55, 1.0));
      s.face_color[c] = static_cast<float>(std::min(1.0, s.body_color[c] * 0.6 + 0.4));
    }
    s.scale_jitter = uniform(0.9, 1.0);
    styles.push_back(s);
  }

  const auto& body = body_skeleton();
  const auto& face = face_dense_skeleton();
  Scene scene;
  scene.label = spec.emotion_class;
  scene.frames = torch::empty({spec.frames, 3, spec.height, spec.width}, torch::kFloat32);
  for (int t = 0; t < spec.frames; ++t) {
    Canvas canvas(spec.height, spec.width);
    const int n = group_at(t);
    // Frames without people stay blank.
    for (int c = 0; c < 3 && n > 0; ++c) {
      for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
          canvas.at(c, y, x) = tint + static_cast<float>(uniform(-0.03, 0.03));
        }
      }
    }
    FrameAnnotation ann;
    ann.frame_index = t;
    auto cells = layout(n, spec.height, spec.width);
    for (int p = 0; p < n; ++p) {
      const auto& style = styles[p];
      const double jitter = 0.02 * cells[p].w;
      Pose pose = make_pose(cells[p], spec.emotion_class, spec.num_classes, style.scale_jitter,
                            uniform(-jitter, jitter), uniform(-jitter, jitter),
                            uniform(-0.08, 0.08));
      const double thick = std::max(1.5, cells[p].h / 70.0);
      for (auto [a, b] : body.edges) {
        canvas.line(pose.body[a].x, pose.body[a].y, pose.body[b].x, pose.body[b].y, thick,
                    style.body_color);
      }
      for (auto [a, b] : face.edges) {
        canvas.line(pose.face[a].x, pose.face[a].y, pose.face[b].x, pose.face[b].y, 1.0,
                    style.face_color);
      }
      normalize(pose.body, spec.height, spec.width);
      normalize(pose.face, spec.height, spec.width);
      ann.persons_body.push_back(keypoints_to_limbs(pose.body, body));
      ann.persons_face.push_back(keypoints_to_limbs(pose.face, face));
    }
    auto frame = torch::from_blob(canvas.data.data(), {3, spec.height, spec.width}, torch::kFloat32)
                     .clamp(0.0, 1.0);
    scene.frames[t].copy_(torch::round(frame * 255.0) / 255.0);
    scene.annotations.push_back(std::move(ann));
  }
  return scene;
}

std::vector<int> class_counts(const DatasetConfig& config) {
  const int k = config.num_classes;
  if (k < 1) throw ConfigError("num_classes must be >= 1");
  std::vector<double> w = config.class_balance;
  if (w.empty()) w.assign(k, 1.0);
  if (static_cast<int>(w.size()) != k) throw ConfigError("class_balance needs one weight per class");
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(total > 0.0) || std::any_of(w.begin(), w.end(), [](double v) { return v < 0.0; })) {
    throw ConfigError("class_balance weights must be non-negative with a positive sum");
  }
  std::vector<int> counts(k);
  std::vector<std::pair<double, int>> remainders;
  int assigned = 0;
  for (int c = 0; c < k; ++c) {
    const double exact = config.num_videos * w[c] / total;
    counts[c] = static_cast<int>(std::floor(exact));
    assigned += counts[c];
    remainders.emplace_back(exact - counts[c], c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int i = 0; assigned < config.num_videos; ++i, ++assigned) ++counts[remainders[i].second];
  return counts;
}

namespace {

std::vector<std::string> default_class_names(int k) {
  if (k == 3) return {"Positive", "Neutral", "Negative"};
  std::vector<std::string> names;
  for (int c = 0; c < k; ++c) names.push_back("class_" + std::to_string(c));
  return names;
}

}  // namespace

void validate(const DatasetConfig& config) {
  if (config.num_videos < 0) throw ConfigError("num_videos must be non-negative");
  auto [gmin, gmax] = config.group_size_range;
  if (gmin < 0 || gmax < gmin) throw ConfigError("invalid group_size_range");
  if (gmax > max_group_size(config.height, config.width)) {
    throw ConfigError("group_size_range upper bound exceeds the packing limit");
  }
  if (config.frames < 1 || config.height < 1 || config.width < 1) {
    throw ConfigError("frames and image size must be positive");
  }
  if (config.feature_dim < 1 || config.text_feature_dim < 1) throw ConfigError("feature dims must be positive");
  if (!config.class_names.empty() && static_cast<int>(config.class_names.size()) != config.num_classes) {
    throw ConfigError("class_names must list one name per class");
  }
  class_counts(config);
}

nlohmann::json to_json(const DatasetConfig& c) {
  return {{"num_videos", c.num_videos},
          {"num_classes", c.num_classes},
          {"class_balance", c.class_balance},
          {"class_names", c.class_names},
          {"group_size_range", {c.group_size_range.first, c.group_size_range.second}},
          {"vary_group_per_frame", c.vary_group_per_frame},
          {"frames", c.frames},
          {"height", c.height},
          {"width", c.width},
          {"seed", c.seed},
          {"with_features", c.with_features},
          {"feature_dim", c.feature_dim},
          {"text_feature_dim", c.text_feature_dim}};
}

DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("dataset config must be an object");
  DatasetConfig c;
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "num_videos") c.num_videos = v.get<int>();
      else if (k == "num_classes") c.num_classes = v.get<int>();
      else if (k == "class_balance") c.class_balance = v.get<std::vector<double>>();
      else if (k == "class_names") c.class_names = v.get<std::vector<std::string>>();
      else if (k == "group_size_range") {
        const auto r = v.get<std::vector<int>>();
        if (r.size() != 2) throw ConfigError("group_size_range needs [min, max]");
        c.group_size_range = {r[0], r[1]};
      } else if (k == "vary_group_per_frame") c.vary_group_per_frame = v.get<bool>();
      else if (k == "frames") c.frames = v.get<int>();
      else if (k == "height") c.height = v.get<int>();
      else if (k == "width") c.width = v.get<int>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "with_features") c.with_features = v.get<bool>();
      else if (k == "feature_dim") c.feature_dim = v.get<int>();
      else if (k == "text_feature_dim") c.text_feature_dim = v.get<int>();
      else throw ConfigError("unknown dataset config key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("dataset config: ") + e.what());
  }
  validate(c);
  return c;
}

Manifest generate_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  if (config.num_videos < 0) throw ConfigError("num_videos must be non-negative");
  auto [gmin, gmax] = config.group_size_range;
  if (gmin < 0 || gmax < gmin) throw ConfigError("invalid group_size_range");
  if (gmax > max_group_size(config.height, config.width)) {
    throw ConfigError("group_size_range upper bound exceeds the packing limit");
  }
  const auto counts = class_counts(config);
  std::error_code ec;
  fs::create_directories(out_dir / "videos", ec);
  fs::create_directories(out_dir / "annotations", ec);
  if (ec || !fs::is_directory(out_dir / "videos")) {
    throw IoError("cannot create dataset directory " + out_dir.string());
  }

  std::vector<int> labels;
  for (int c = 0; c < config.num_classes; ++c) labels.insert(labels.end(), counts[c], c);
  std::mt19937_64 order_rng(derive_seed(config.seed, "dataset-order"));
  std::shuffle(labels.begin(), labels.end(), order_rng);

  Manifest manifest;
  manifest.class_names =
      config.class_names.empty() ? default_class_names(config.num_classes) : config.class_names;
  if (static_cast<int>(manifest.class_names.size()) != config.num_classes) {
    throw ConfigError("class_names must list one name per class");
  }

  FeatureIndex features;
  for (int v = 0; v < config.num_videos; ++v) {
    char id[32];
    std::snprintf(id, sizeof id, "vid%05d", v);
    const std::string video_id = id;
    const std::uint64_t vseed = derive_seed(config.seed, video_id);
    std::mt19937_64 rng(vseed);
    std::uniform_int_distribution<int> gdist(gmin, gmax);

    SceneSpec spec;
    spec.emotion_class = labels[v];
    spec.num_classes = config.num_classes;
    spec.frames = config.frames;
    spec.height = config.height;
    spec.width = config.width;
    spec.group_size = gdist(rng);
    if (config.vary_group_per_frame) {
      for (int t = 0; t < config.frames; ++t) spec.per_frame_group_size.push_back(gdist(rng));
    }
    spec.rng_seed = rng();
    Scene scene = generate_scene(spec);

    VideoAnnotation ann;
    ann.video_id = video_id;
    ann.frames = std::move(scene.annotations);

    ManifestEntry entry;
    entry.video_id = video_id;
    entry.path = "videos/" + video_id + ".frames";
    entry.annotation_path = "annotations/" + video_id + ".json";
    entry.label = spec.emotion_class;
    entry.class_name = manifest.class_names[entry.label];
    entry.frame_count = config.frames;
    write_frames(scene.frames, out_dir / entry.path);
    write_annotation(ann, out_dir / entry.annotation_path);
    manifest.entries.push_back(entry);

    if (config.with_features) {
      auto more = synthesize_features(video_id, entry.label, config.num_classes,
                                      config.feature_dim, config.text_feature_dim,
                                      derive_seed(vseed, "features"), out_dir);
      features.insert(features.end(), more.begin(), more.end());
    }
  }
  write_manifest(manifest, out_dir / "manifest.jsonl");
  if (config.with_features) write_feature_index(features, out_dir / "features" / "index.jsonl");
  return manifest;
}

void write_frames(const torch::Tensor& frames, const std::filesystem::path& path) {
  if (frames.dim() != 4) throw ShapeError("write_frames expects (T,C,H,W)");
  auto bytes = torch::round(frames.clamp(0.0, 1.0) * 255.0).to(torch::kUInt8).contiguous();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write frames " + path.string());
  out.write("VEMDFRM1", 8);
  for (int d = 0; d < 4; ++d) {
    const std::int32_t v = static_cast<std::int32_t>(frames.size(d));
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  out.write(reinterpret_cast<const char*>(bytes.data_ptr<std::uint8_t>()), bytes.numel());
  if (!out) throw IoError("short write to " + path.string());
}

torch::Tensor read_frames(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open frames " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "VEMDFRM1", 8) != 0) throw FormatError("bad frames header in " + path.string());
  std::int32_t dims[4];
  in.read(reinterpret_cast<char*>(dims), sizeof dims);
  for (auto d : dims)
    if (d <= 0) throw FormatError("bad frame dimensions in " + path.string());
  auto bytes = torch::empty({dims[0], dims[1], dims[2], dims[3]}, torch::kUInt8);
  in.read(reinterpret_cast<char*>(bytes.data_ptr<std::uint8_t>()), bytes.numel());
  if (!in) throw FormatError("truncated frames file " + path.string());
  return bytes.to(torch::kFloat32) / 255.0;
}

}  // namespace vemd
