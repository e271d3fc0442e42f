#include "vemd/feature_io.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "vemd/common.hpp"

namespace vemd {

using nlohmann::json;

void write_feature_file(const FeatureRecord& record, const std::filesystem::path& path) {
  if (record.sequence.dim() != 2) throw ShapeError("feature sequence must be (L, d)");
  if (record.sequence.size(0) < 1) throw ShapeError("feature sequence must have L >= 1");
  auto data = record.sequence.to(torch::kFloat32).contiguous();
  if (!torch::isfinite(data).all().item<bool>()) throw FormatError("non-finite feature values");
  json header = {{"video_id", record.video_id},
                 {"modality", record.modality},
                 {"shape", {data.size(0), data.size(1)}},
                 {"dtype", "float32"}};
  const std::string h = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write feature file " + path.string());
  out.write("VEMDFEAT", 8);
  const std::uint32_t len = static_cast<std::uint32_t>(h.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(h.data(), h.size());
  out.write(reinterpret_cast<const char*>(data.data_ptr<float>()), data.numel() * sizeof(float));
  if (!out) throw IoError("short write to " + path.string());
}

FeatureRecord read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "VEMDFEAT", 8) != 0) {
    throw FormatError("bad feature file header in " + path.string());
  }
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  std::string h(len, '\0');
  in.read(h.data(), len);
  if (!in) throw FormatError("truncated feature header in " + path.string());
  FeatureRecord rec;
  std::int64_t rows = 0, cols = 0;
  try {
    auto header = json::parse(h);
    rec.video_id = header.at("video_id").get<std::string>();
    rec.modality = header.at("modality").get<std::string>();
    if (header.at("dtype").get<std::string>() != "float32") throw FormatError("unsupported dtype");
    rows = header.at("shape").at(0).get<std::int64_t>();
    cols = header.at("shape").at(1).get<std::int64_t>();
  } catch (const json::exception& ex) {
    throw FormatError("feature header in " + path.string() + ": " + ex.what());
  }
  if (rows < 1 || cols < 1) throw FormatError("feature file " + path.string() + " has empty shape");
  rec.sequence = torch::empty({rows, cols}, torch::kFloat32);
  in.read(reinterpret_cast<char*>(rec.sequence.data_ptr<float>()), rows * cols * sizeof(float));
  if (!in) throw FormatError("truncated feature payload in " + path.string());
  return rec;
}

void write_feature_index(const FeatureIndex& index, const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write feature index " + path.string());
  for (const auto& e : index) {
    out << json{{"video_id", e.video_id}, {"modality", e.modality}, {"path", e.path}, {"label", e.label}}
               .dump()
        << '\n';
  }
}

FeatureIndex read_feature_index(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open feature index " + path.string());
  FeatureIndex index;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = json::parse(line);
      index.push_back({j.at("video_id").get<std::string>(), j.at("modality").get<std::string>(),
                       j.at("path").get<std::string>(), j.value("label", -1)});
    } catch (const json::exception& ex) {
      throw FormatError("feature index " + path.string() + ": " + ex.what());
    }
  }
  return index;
}

FeatureIndex synthesize_features(const std::string& video_id, int label, int num_classes,
                                 int feature_dim, int text_feature_dim, std::uint64_t seed,
                                 const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir / "features");
  struct Spec {
    const char* modality;
    int length;
    int dim;
  };
  const Spec specs[] = {{kAcoustic, 8, feature_dim}, {kContent, 6, feature_dim}, {kText, 4, text_feature_dim}};
  FeatureIndex index;
  torch::Generator noise_gen = at::detail::createCPUGenerator(seed);
  for (const auto& s : specs) {
    // Class means depend only on (modality, class) so they are shared by all videos.
    torch::Generator mean_gen =
        at::detail::createCPUGenerator(derive_seed(static_cast<std::uint64_t>(num_classes), s.modality) +
                                       static_cast<std::uint64_t>(label));
    auto mean = torch::randn({1, s.dim}, mean_gen, torch::kFloat32);
    auto seq = mean + 0.7 * torch::randn({s.length, s.dim}, noise_gen, torch::kFloat32);
    const std::string name = video_id + "." + s.modality + ".feat";
    write_feature_file({video_id, s.modality, seq}, out_dir / "features" / name);
    index.push_back({video_id, s.modality, name, label});
  }
  return index;
}

}  // namespace vemd
