#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "test_util.hpp"
#include "vemd/annotations.hpp"
#include "vemd/common.hpp"
#include "vemd/datagen.hpp"
#include "vemd/dataset.hpp"
#include "vemd/skeleton.hpp"

using namespace vemd;
using vemd::testing::TempDir;

namespace {

std::vector<Keypoint> full_person(double conf = 1.0) {
  std::vector<Keypoint> kp;
  for (int j = 0; j < 17; ++j) kp.push_back({0.1 + 0.04 * j, 0.2 + 0.03 * j, conf});
  return kp;
}

PersonLimbs single_limb(int num_limbs, int k, std::array<double, 4> coords) {
  PersonLimbs p;
  p.limbs.assign(num_limbs, {0, 0, 0, 0});
  p.valid_mask.assign(num_limbs, 0);
  p.limbs[k] = coords;
  p.valid_mask[k] = 1;
  return p;
}

Skeleton random_skeleton(std::mt19937& rng) {
  std::uniform_int_distribution<int> nj(2, 12);
  Skeleton s;
  s.name = "random";
  const int n = nj(rng);
  for (int j = 0; j < n; ++j) s.joints.push_back("j" + std::to_string(j));
  std::set<std::pair<int, int>> used;
  std::uniform_int_distribution<int> pick(0, n - 1);
  for (int e = 0; e < 2 * n; ++e) {
    int a = pick(rng), b = pick(rng);
    if (a == b) continue;
    if (used.count({std::min(a, b), std::max(a, b)})) continue;
    used.insert({std::min(a, b), std::max(a, b)});
    s.edges.emplace_back(a, b);
  }
  return s;
}

}  // namespace

TEST(Skeleton, BuiltinCounts) {
  EXPECT_EQ(body_skeleton().num_joints(), 17);
  EXPECT_EQ(body_skeleton().num_limbs(), 18);
  EXPECT_EQ(face_query_skeleton().num_limbs(), 20);
  EXPECT_EQ(face_dense_skeleton().num_limbs(), 83);
  for (const auto& name : SkeletonRegistry::builtin().names()) {
    EXPECT_NO_THROW(SkeletonRegistry::builtin().get(name).validate()) << name;
  }
  EXPECT_EQ(limb_index_map(face_dense_skeleton(), face_query_skeleton()).size(), 20u);
}

TEST(Skeleton, RejectsBadEdges) {
  Skeleton s{"bad", {"a", "b"}, {{0, 2}}};
  EXPECT_THROW(s.validate(), ConfigError);
  s.edges = {{0, 1}, {1, 0}};
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(KeypointsToLimbs, FullPersonAllValid) {
  const auto kp = full_person();
  auto p = keypoints_to_limbs(kp, body_skeleton());
  ASSERT_EQ(p.num_limbs(), 18);
  EXPECT_EQ(p.num_valid(), 18);
  EXPECT_EQ(p.coords_tensor().sizes(), (std::vector<int64_t>{18, 4}));
  const auto [a, b] = body_skeleton().edges[0];
  EXPECT_DOUBLE_EQ(p.limbs[0][0], kp[a].x);
  EXPECT_DOUBLE_EQ(p.limbs[0][3], kp[b].y);
}

TEST(KeypointsToLimbs, ZeroConfidenceMasksAll) {
  auto p = keypoints_to_limbs(full_person(0.0), body_skeleton());
  EXPECT_EQ(p.num_valid(), 0);
  for (const auto& l : p.limbs)
    for (double c : l) EXPECT_EQ(c, 0.0);
}

TEST(KeypointsToLimbs, LowJointMasksTouchingLimbs) {
  const auto& skel = body_skeleton();
  for (int j = 0; j < 17; ++j) {
    auto kp = full_person();
    kp[j].confidence = 0.1;
    auto p = keypoints_to_limbs(kp, skel);
    int touching = 0;
    for (const auto& [a, b] : skel.edges) touching += (a == j || b == j);
    EXPECT_EQ(p.num_valid(), 18 - touching) << "joint " << j;
    for (int k = 0; k < 18; ++k) {
      const bool touches = skel.edges[k].first == j || skel.edges[k].second == j;
      EXPECT_EQ(p.valid_mask[k], touches ? 0 : 1);
    }
  }
}

TEST(KeypointsToLimbs, JointCountMismatch) {
  std::vector<Keypoint> kp(5);
  EXPECT_THROW(keypoints_to_limbs(kp, body_skeleton()), FormatError);
}

TEST(Adjacency, SharedAndDisjoint) {
  Skeleton chain{"chain", {"a", "b", "c"}, {{0, 1}, {1, 2}}};
  auto a = build_adjacency(chain);
  EXPECT_EQ(a.at(0, 1), 1);
  EXPECT_EQ(a.at(1, 0), 1);
  EXPECT_EQ(a.at(0, 0), 0);
  Skeleton apart{"apart", {"a", "b", "c", "d"}, {{0, 1}, {2, 3}}};
  auto b = build_adjacency(apart);
  EXPECT_EQ(b.at(0, 1), 0);
  EXPECT_EQ(b.at(1, 0), 0);
}

TEST(Adjacency, BodyMatchesBruteForce) {
  const auto& s = body_skeleton();
  auto a = build_adjacency(s);
  for (int i = 0; i < 18; ++i)
    for (int j = 0; j < 18; ++j) {
      const auto [p, q] = s.edges[i];
      const auto [r, t] = s.edges[j];
      const int expect = i != j && (p == r || p == t || q == r || q == t);
      EXPECT_EQ(a.at(i, j), expect) << i << "," << j;
    }
}

TEST(Adjacency, RandomSkeletonsSymmetricZeroDiagonal) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    auto s = random_skeleton(rng);
    auto a = build_adjacency(s);
    for (int i = 0; i < a.size; ++i) {
      EXPECT_EQ(a.at(i, i), 0);
      for (int j = 0; j < a.size; ++j) EXPECT_EQ(a.at(i, j), a.at(j, i));
    }
  }
}

TEST(Heatmaps, EmptySceneIsZero) {
  auto h = render_limb_heatmaps({}, 18, 56, 56, 2.0);
  EXPECT_EQ(h.sizes(), (std::vector<int64_t>{18, 56, 56}));
  EXPECT_EQ(h.abs().max().item<float>(), 0.0f);
}

TEST(Heatmaps, HorizontalLimbPeaksOnSegment) {
  const double sigma = 2.0;
  // Pixel centres sit at (i + 0.5) / 56, so y = 28.5 / 56 runs through row 28.
  auto p = single_limb(18, 3, {20.5 / 56, 28.5 / 56, 36.5 / 56, 28.5 / 56});
  std::vector<PersonLimbs> persons{p};
  auto h = render_limb_heatmaps(persons, 18, 56, 56, sigma);
  ASSERT_EQ(h.sizes(), (std::vector<int64_t>{18, 56, 56}));
  const float mid = h[3][28][28].item<float>();
  EXPECT_NEAR(mid, 1.0f, 1e-6);
  for (int y = 0; y < 56; ++y)
    for (int x = 0; x < 56; ++x) {
      const double dy = std::abs(y - 28.0), dx = std::max({20.0 - x, 0.0, x - 36.0});
      if (std::hypot(dx, dy) >= 3 * sigma) { EXPECT_LE(h[3][y][x].item<float>(), mid); }
    }
  EXPECT_EQ(h[0].abs().max().item<float>(), 0.0f);
  EXPECT_LE(h.max().item<float>(), 1.0f);
  EXPECT_GE(h.min().item<float>(), 0.0f);
}

TEST(Heatmaps, TwoPersonsEqualElementwiseMax) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  auto random_person = [&] {
    PersonLimbs p;
    for (int k = 0; k < 18; ++k) {
      p.limbs.push_back({u(rng), u(rng), u(rng), u(rng)});
      p.valid_mask.push_back(u(rng) > 0.2);
      if (!p.valid_mask.back()) p.limbs.back() = {0, 0, 0, 0};
    }
    return p;
  };
  const auto a = random_person(), b = random_person();
  std::vector<PersonLimbs> va{a}, vb{b}, ab{a, b}, ba{b, a};
  auto ha = render_limb_heatmaps(va, 18);
  auto hb = render_limb_heatmaps(vb, 18);
  auto hab = render_limb_heatmaps(ab, 18);
  auto hba = render_limb_heatmaps(ba, 18);
  auto acc_a = ha.accessor<float, 3>(), acc_b = hb.accessor<float, 3>(), acc = hab.accessor<float, 3>();
  for (int k = 0; k < 18; ++k)
    for (int y = 0; y < 56; ++y)
      for (int x = 0; x < 56; ++x) ASSERT_EQ(acc[k][y][x], std::max(acc_a[k][y][x], acc_b[k][y][x]));
  EXPECT_TRUE(torch::equal(hab, hba));
}

TEST(Heatmaps, RejectsBadArguments) {
  EXPECT_THROW(render_limb_heatmaps({}, 18, 0, 56), ArgumentError);
  EXPECT_THROW(render_limb_heatmaps({}, 18, 56, 56, 0.0), ArgumentError);
  std::vector<PersonLimbs> wrong{single_limb(5, 0, {0, 0, 1, 1})};
  EXPECT_THROW(render_limb_heatmaps(wrong, 18), ShapeError);
}

TEST(AnnotationIo, RoundTripIsExact) {
  TempDir dir("ann");
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  VideoAnnotation v;
  v.video_id = "clip";
  for (int f = 0; f < 3; ++f) {
    FrameAnnotation fa;
    fa.frame_index = f;
    for (int p = 0; p < f + 1; ++p) {
      PersonLimbs b;
      for (int k = 0; k < 18; ++k) {
        b.limbs.push_back({u(rng), u(rng), u(rng), u(rng)});
        b.valid_mask.push_back(1);
      }
      fa.persons_body.push_back(b);
    }
    v.frames.push_back(fa);
  }
  write_annotation(v, dir.path() / "a.json");
  EXPECT_EQ(read_annotation(dir.path() / "a.json"), v);
}

namespace {

Manifest synthetic_manifest(int n) {
  Manifest m;
  m.class_names = {"Positive", "Neutral", "Negative"};
  for (int i = 0; i < n; ++i) {
    m.entries.push_back({"v" + std::to_string(i), "videos/v.frames", i % 3, m.class_names[i % 3], 5,
                         "annotations/v" + std::to_string(i) + ".json"});
  }
  return m;
}

VideoAnnotation with_persons(const std::string& id, std::vector<int> bodies_per_frame) {
  VideoAnnotation v;
  v.video_id = id;
  for (size_t f = 0; f < bodies_per_frame.size(); ++f) {
    FrameAnnotation fa;
    fa.frame_index = static_cast<int>(f);
    for (int p = 0; p < bodies_per_frame[f]; ++p) fa.persons_body.push_back(single_limb(18, 0, {0.1, 0.1, 0.2, 0.2}));
    v.frames.push_back(fa);
  }
  return v;
}

}  // namespace

TEST(FilterManifest, DropSummaryArithmetic) {
  const auto m = synthetic_manifest(9815);
  std::set<std::string> empty;
  for (int i = 0; i < 257; ++i) empty.insert("v" + std::to_string(i * 38));
  AnnotationSource src = [&](const ManifestEntry& e) -> std::optional<VideoAnnotation> {
    return with_persons(e.video_id, {empty.count(e.video_id) ? 0 : 1});
  };
  auto r = filter_manifest(m, src);
  EXPECT_EQ(r.report.kept, 9558u);
  EXPECT_EQ(r.report.dropped, 257u);
  EXPECT_EQ(r.report.summary(), "9558 (-2.62%)");
}

TEST(FilterManifest, NoneAndAllEmpty) {
  const auto m = synthetic_manifest(12);
  AnnotationSource full = [](const ManifestEntry& e) -> std::optional<VideoAnnotation> {
    return with_persons(e.video_id, {1, 0});
  };
  auto r = filter_manifest(m, full);
  EXPECT_EQ(r.manifest, m);
  EXPECT_EQ(r.report.summary(), "12 (0.00%)");
  AnnotationSource none = [](const ManifestEntry& e) -> std::optional<VideoAnnotation> {
    return with_persons(e.video_id, {0, 0});
  };
  auto r2 = filter_manifest(m, none);
  EXPECT_TRUE(r2.manifest.entries.empty());
  EXPECT_EQ(r2.report.summary(), "0 (-100.00%)");
}

TEST(FilterManifest, MissingFileReportedAndIdempotent) {
  const auto m = synthetic_manifest(10);
  AnnotationSource src = [](const ManifestEntry& e) -> std::optional<VideoAnnotation> {
    if (e.video_id == "v3") return std::nullopt;
    return with_persons(e.video_id, {e.video_id == "v5" ? 0 : 2});
  };
  auto once = filter_manifest(m, src);
  ASSERT_EQ(once.report.drops.size(), 2u);
  EXPECT_EQ(once.report.drops[0].first, "v3");
  EXPECT_EQ(once.report.drops[0].second, "missing annotation file");
  auto twice = filter_manifest(once.manifest, src);
  EXPECT_EQ(twice.manifest, once.manifest);
  EXPECT_EQ(twice.report.dropped, 0u);
}

TEST(ManifestStats, MaximaAndBruteForce) {
  auto m = synthetic_manifest(30);
  std::mt19937 rng(5);
  std::uniform_int_distribution<int> n(0, 7);
  std::map<std::string, VideoAnnotation> anns;
  int brute = 0;
  for (const auto& e : m.entries) {
    std::vector<int> counts{n(rng), n(rng), n(rng)};
    for (int c : counts) brute = std::max(brute, c);
    anns[e.video_id] = with_persons(e.video_id, counts);
  }
  AnnotationSource src = [&](const ManifestEntry& e) -> std::optional<VideoAnnotation> { return anns.at(e.video_id); };
  auto s = manifest_stats(m, src);
  EXPECT_EQ(s.max_bodies_per_frame, brute);
  EXPECT_EQ(s.max_faces_per_frame, 0);
  EXPECT_EQ(s.per_class, (std::vector<std::size_t>{10, 10, 10}));

  anns["v0"] = with_persons("v0", {1, 5, 2});
  for (auto& [id, a] : anns)
    if (id != "v0") a = with_persons(id, {1});
  EXPECT_EQ(manifest_stats(m, src).max_bodies_per_frame, 5);

  Manifest empty;
  auto z = manifest_stats(empty, src);
  EXPECT_EQ(z.max_bodies_per_frame, 0);
  EXPECT_EQ(z.max_faces_per_frame, 0);
}

TEST(ManifestIo, RoundTrip) {
  TempDir dir("manifest");
  auto m = synthetic_manifest(7);
  write_manifest(m, dir.path() / "m.jsonl");
  EXPECT_EQ(read_manifest(dir.path() / "m.jsonl"), m);
  m.entries[1].video_id = m.entries[0].video_id;
  EXPECT_THROW(m.validate(), Error);
}

TEST(Datagen, EmptyGroupIsBlank) {
  SceneSpec spec;
  spec.group_size = 0;
  spec.frames = 2;
  auto s = generate_scene(spec);
  EXPECT_EQ(s.frames.sizes(), (std::vector<int64_t>{2, 3, 224, 224}));
  EXPECT_EQ(s.frames.abs().max().item<float>(), 0.0f);
  for (const auto& f : s.annotations) {
    EXPECT_TRUE(f.persons_body.empty());
    EXPECT_TRUE(f.persons_face.empty());
  }
}

TEST(Datagen, DeterministicAndSeedSensitive) {
  SceneSpec spec;
  spec.group_size = 3;
  spec.rng_seed = 42;
  auto a = generate_scene(spec), b = generate_scene(spec);
  EXPECT_TRUE(torch::equal(a.frames, b.frames));
  EXPECT_EQ(a.annotations, b.annotations);
  spec.rng_seed = 43;
  auto c = generate_scene(spec);
  EXPECT_FALSE(torch::equal(a.frames, c.frames));
}

TEST(Datagen, AnnotationsSatisfyInvariants) {
  SceneSpec spec;
  spec.group_size = 4;
  spec.rng_seed = 9;
  auto s = generate_scene(spec);
  for (const auto& f : s.annotations) {
    EXPECT_EQ(f.persons_body.size(), 4u);
    for (const auto* group : {&f.persons_body, &f.persons_face})
      for (const auto& p : *group)
        for (int k = 0; k < p.num_limbs(); ++k)
          for (double c : p.limbs[k]) {
            EXPECT_GE(c, 0.0);
            EXPECT_LE(c, 1.0);
            if (!p.valid_mask[k]) { EXPECT_EQ(c, 0.0); }
          }
    for (const auto& p : f.persons_body) EXPECT_EQ(p.num_limbs(), 18);
    for (const auto& p : f.persons_face) EXPECT_EQ(p.num_limbs(), 83);
  }
}

TEST(Datagen, PackingLimit) {
  SceneSpec spec;
  spec.group_size = max_group_size(224, 224) + 1;
  EXPECT_THROW(generate_scene(spec), ConfigError);
}

TEST(Datagen, BalancedDatasetOnDisk) {
  TempDir dir("ds");
  DatasetConfig cfg;
  cfg.num_videos = 30;
  cfg.group_size_range = {1, 1};
  cfg.frames = 2;
  cfg.height = cfg.width = 112;
  auto m = generate_dataset(cfg, dir.path());
  std::vector<int> counts(3, 0);
  for (const auto& e : m.entries) ++counts[e.label];
  EXPECT_EQ(counts, (std::vector<int>{10, 10, 10}));
  EXPECT_EQ(read_manifest(dir.path() / "manifest.jsonl"), m);
  auto src = annotations_on_disk(dir.path());
  for (const auto& e : m.entries) {
    auto a = src(e);
    ASSERT_TRUE(a);
    for (const auto& f : a->frames) EXPECT_EQ(f.persons_body.size(), 1u);
  }
}

TEST(Datagen, GroupRangeMatchesExhaustiveScan) {
  TempDir dir("ds26");
  DatasetConfig cfg;
  cfg.num_videos = 12;
  cfg.group_size_range = {2, 6};
  cfg.vary_group_per_frame = true;
  cfg.frames = 3;
  cfg.seed = 4;
  auto m = generate_dataset(cfg, dir.path());
  auto src = annotations_on_disk(dir.path());
  int brute = 0;
  for (const auto& e : m.entries) {
    const auto ann = src(e);
    ASSERT_TRUE(ann);
    for (const auto& f : ann->frames) {
      EXPECT_GE(f.persons_body.size(), 2u);
      brute = std::max<int>(brute, static_cast<int>(f.persons_body.size()));
    }
  }
  const auto stats = manifest_stats(m, src);
  EXPECT_EQ(stats.max_bodies_per_frame, brute);
  EXPECT_GE(stats.max_bodies_per_frame, 2);
  EXPECT_LE(stats.max_bodies_per_frame, 6);
}

TEST(Datagen, ClassBalanceLargestRemainder) {
  DatasetConfig cfg;
  cfg.num_videos = 10;
  cfg.class_balance = {0.5, 0.3, 0.2};
  EXPECT_EQ(class_counts(cfg), (std::vector<int>{5, 3, 2}));
  cfg.num_videos = 7;
  cfg.class_balance = {};
  const auto c = class_counts(cfg);
  EXPECT_EQ(c[0] + c[1] + c[2], 7);
}

TEST(Datagen, UnwritablePath) {
  DatasetConfig cfg;
  cfg.num_videos = 1;
  EXPECT_THROW(generate_dataset(cfg, "/proc/vemd_cannot_write_here"), IoError);
}

// Baseline oracle: a limb-angle histogram with a linear softmax classifier
// separates the classes of a 30-video set.
TEST(Datagen, LimbAngleHistogramSeparatesClasses) {
  constexpr int kBins = 12;
  std::vector<std::vector<double>> feats;
  std::vector<int64_t> labels;
  for (int v = 0; v < 30; ++v) {
    SceneSpec spec;
    spec.group_size = 1 + v % 4;
    spec.emotion_class = v % 3;
    spec.rng_seed = 1000 + v;
    auto s = generate_scene(spec);
    std::vector<double> h(2 * kBins, 0.0);
    double n = 0;
    for (const auto& f : s.annotations) {
      for (const auto& p : f.persons_body) {
        for (int k = 0; k < p.num_limbs(); ++k) {
          if (!p.valid_mask[k]) continue;
          const auto& l = p.limbs[k];
          const double a = std::atan2(l[3] - l[1], l[2] - l[0]);
          const int bin = std::clamp(static_cast<int>((a + M_PI) / (2 * M_PI) * kBins), 0, kBins - 1);
          h[bin] += 1;
          n += 1;
        }
      }
      for (const auto& p : f.persons_face) {
        for (int k = 0; k < p.num_limbs(); ++k) {
          if (!p.valid_mask[k]) continue;
          const auto& l = p.limbs[k];
          const double a = std::atan2(l[3] - l[1], l[2] - l[0]);
          const int bin = std::clamp(static_cast<int>((a + M_PI) / (2 * M_PI) * kBins), 0, kBins - 1);
          h[kBins + bin] += 1;
        }
      }
    }
    double fn = 0;
    for (int b = kBins; b < 2 * kBins; ++b) fn += h[b];
    for (int b = 0; b < kBins; ++b) h[b] /= std::max(1.0, n);
    for (int b = kBins; b < 2 * kBins; ++b) h[b] /= std::max(1.0, fn);
    feats.push_back(h);
    labels.push_back(spec.emotion_class);
  }
  auto x = torch::empty({30, 2 * kBins}, torch::kFloat64);
  for (int i = 0; i < 30; ++i)
    for (int b = 0; b < 2 * kBins; ++b) x[i][b] = feats[i][b];
  x = (x - x.mean(0)) / (x.std(0) + 1e-9);
  auto y = torch::tensor(labels, torch::kLong);
  auto w = torch::zeros({2 * kBins, 3}, torch::kFloat64).requires_grad_(true);
  auto b = torch::zeros({3}, torch::kFloat64).requires_grad_(true);
  torch::optim::SGD opt({w, b}, 0.5);
  for (int it = 0; it < 500; ++it) {
    auto loss = torch::nn::functional::cross_entropy(torch::matmul(x, w) + b, y);
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  const double acc = (torch::matmul(x, w) + b).argmax(1).eq(y).to(torch::kFloat64).mean().item<double>();
  EXPECT_GE(acc, 0.95);
}

TEST(SampleFrames, UniformRule) {
  const auto a = sample_frames(100, 10);
  ASSERT_EQ(a.size(), 10u);
  EXPECT_EQ(a.front(), 0);
  EXPECT_EQ(a.back(), 99);
  for (size_t i = 1; i < a.size(); ++i) EXPECT_LT(a[i - 1], a[i]);
  std::vector<int> id(7);
  std::iota(id.begin(), id.end(), 0);
  EXPECT_EQ(sample_frames(7, 7), id);
  EXPECT_EQ(sample_frames(1, 1), std::vector<int>{0});
  EXPECT_EQ(sample_frames(5, 1), std::vector<int>{0});
}

TEST(SampleFrames, ShortVideoMatchesLinspaceOracle) {
  const auto s = sample_frames(3, 5);
  std::vector<int> oracle;
  for (int i = 0; i < 5; ++i) oracle.push_back(static_cast<int>(std::floor(i * 2.0 / 4.0 + 0.5)));
  EXPECT_EQ(s, oracle);
  EXPECT_EQ(std::set<int>(s.begin(), s.end()), (std::set<int>{0, 1, 2}));
  EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
}

TEST(SampleFrames, PropertyWithinRange) {
  for (int f = 1; f < 40; ++f)
    for (int t = 1; t < 40; ++t) {
      const auto s = sample_frames(f, t);
      ASSERT_EQ(static_cast<int>(s.size()), t);
      EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
      EXPECT_GE(s.front(), 0);
      EXPECT_LE(s.back(), f - 1);
    }
  EXPECT_THROW(sample_frames(0, 3), ArgumentError);
}
