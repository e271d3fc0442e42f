#include "vemd/multimodal.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "vemd/common.hpp"
#include "vemd/dataset.hpp"
#include "vemd/feature_io.hpp"
#include "vemd/trainer.hpp"

namespace vemd {

using json = nlohmann::json;
namespace fs = std::filesystem;

void FuseConfig::validate() const {
  if (features.empty()) throw ConfigError("fuse config needs a feature index");
  static const std::set<std::string> known{kAcoustic, kContent, kText, kVideo};
  for (const auto& m : modalities)
    if (!known.count(m)) throw ConfigError("unknown modality '" + m + "'");
  if (!modalities.empty()) {
    std::set<std::string> groups;
    for (const auto& m : modalities) groups.insert(m == kContent ? kAcoustic : m);
    if (groups.size() < 2) {
      throw ConfigError("fusion needs at least two modality groups; use `vemd train`/`vemd eval` for one");
    }
  }
  if (proj_dim < 1 || heads < 1 || epochs < 0 || batch_size < 1) throw ConfigError("fuse sizes must be positive");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
}

json to_json(const FuseConfig& c) {
  return {{"features", c.features}, {"modalities", c.modalities}, {"video_checkpoint", c.video_checkpoint},
          {"manifest", c.manifest}, {"proj_dim", c.proj_dim},   {"heads", c.heads},
          {"use_afg", c.use_afg},   {"cross_attention", c.cross_attention},
          {"freeze_video", c.freeze_video}, {"epochs", c.epochs}, {"batch_size", c.batch_size},
          {"lr", c.lr},             {"seed", c.seed}};
}

FuseConfig fuse_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("fuse config must be an object");
  FuseConfig c;
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "features") c.features = v.get<std::string>();
      else if (k == "modalities") c.modalities = v.get<std::vector<std::string>>();
      else if (k == "video_checkpoint") c.video_checkpoint = v.get<std::string>();
      else if (k == "manifest") c.manifest = v.get<std::string>();
      else if (k == "proj_dim") c.proj_dim = v.get<int>();
      else if (k == "heads") c.heads = v.get<int>();
      else if (k == "use_afg") c.use_afg = v.get<bool>();
      else if (k == "cross_attention") c.cross_attention = v.get<bool>();
      else if (k == "freeze_video") c.freeze_video = v.get<bool>();
      else if (k == "epochs") c.epochs = v.get<int>();
      else if (k == "batch_size") c.batch_size = v.get<int>();
      else if (k == "lr") c.lr = v.get<double>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else throw ConfigError("unknown fuse config key '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("fuse config: ") + e.what());
  }
  c.validate();
  return c;
}

FuseConfig load_fuse_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  auto c = fuse_config_from_json(j);
  auto resolve = [&](std::string& p) {
    if (!p.empty() && fs::path(p).is_relative()) p = (path.parent_path() / p).lexically_normal().string();
  };
  resolve(c.features);
  resolve(c.video_checkpoint);
  resolve(c.manifest);
  return c;
}

std::vector<FusionSample> load_fusion_samples(const FuseConfig& cfg, int* num_classes) {
  const fs::path index_path(cfg.features);
  const auto index = read_feature_index(index_path);
  std::map<std::string, FusionSample> by_id;
  std::vector<std::string> order;
  const std::set<std::string> wanted(cfg.modalities.begin(), cfg.modalities.end());
  int max_label = -1;
  for (const auto& e : index) {
    if (!wanted.count(e.modality)) continue;
    auto rec = read_feature_file(index_path.parent_path() / e.path);
    if (rec.video_id != e.video_id || rec.modality != e.modality) {
      throw FormatError("feature file " + e.path + " does not match its index entry");
    }
    auto [it, fresh] = by_id.try_emplace(e.video_id);
    if (fresh) {
      order.push_back(e.video_id);
      it->second.video_id = e.video_id;
      it->second.label = e.label;
    }
    it->second.sequences[e.modality] = rec.sequence.to(torch::kFloat32);
    max_label = std::max(max_label, e.label);
  }
  int classes = max_label + 1;
  const bool need_video = wanted.count(kVideo) &&
                          std::none_of(index.begin(), index.end(), [](const auto& e) { return e.modality == kVideo; });
  if (need_video) {
    if (cfg.video_checkpoint.empty() || cfg.manifest.empty()) {
      throw ConfigError("video modality needs video features in the index or a video_checkpoint plus manifest");
    }
    auto lm = load_checkpoint(cfg.video_checkpoint);
    auto data = load_video_set(cfg.manifest, lm.config.frames_per_video);
    classes = std::max(classes, data.num_classes());
    torch::NoGradGuard ng;
    for (const auto& v : data.videos) {
      auto out = lm.model(v.frames.unsqueeze(0));
      auto it = by_id.find(v.video_id);
      if (it == by_id.end()) continue;
      it->second.sequences[kVideo] = out.emotion.frame_features[0].detach().clone();
    }
  }
  std::vector<FusionSample> samples;
  for (const auto& id : order) {
    auto& s = by_id.at(id);
    bool complete = true;
    for (const auto& m : wanted) complete = complete && s.sequences.count(m);
    if (complete) samples.push_back(std::move(s));
  }
  if (num_classes) *num_classes = classes;
  return samples;
}

FuseResult run_fusion(const FuseConfig& cfg, const fs::path& out_dir, std::ostream* log) {
  cfg.validate();
  int num_classes = 0;
  auto samples = load_fusion_samples(cfg, &num_classes);
  if (samples.empty()) throw ArgumentError("no video carries every requested modality");

  LateFusionOptions o;
  o.proj_dim = cfg.proj_dim;
  o.heads = cfg.heads;
  o.num_classes = num_classes;
  o.cross_attention = cfg.cross_attention;
  o.use_afg = cfg.use_afg;
  for (const auto& m : cfg.modalities) {
    o.branches.push_back({m, static_cast<int>(samples[0].sequences.at(m).size(1)), m == kVideo && cfg.freeze_video});
  }
  torch::manual_seed(derive_seed(cfg.seed, "fusion"));
  FuseResult res;
  res.model = LateFusion(o);
  std::vector<torch::Tensor> params;
  for (auto& p : res.model->parameters())
    if (p.requires_grad()) params.push_back(p);
  torch::optim::Adam opt(params, torch::optim::AdamOptions(cfg.lr));

  auto batch = [&](const std::vector<size_t>& idx) {
    std::map<std::string, torch::Tensor> seqs;
    for (const auto& m : cfg.modalities) {
      std::vector<torch::Tensor> xs;
      for (auto i : idx) xs.push_back(samples[i].sequences.at(m));
      seqs[m] = torch::stack(xs);
    }
    return seqs;
  };
  std::mt19937_64 rng(derive_seed(cfg.seed, "fusion-order"));
  std::vector<size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  for (int e = 0; e < cfg.epochs; ++e) {
    res.model->train();
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (size_t s = 0; s < order.size(); s += cfg.batch_size) {
      std::vector<size_t> idx(order.begin() + s, order.begin() + std::min(order.size(), s + cfg.batch_size));
      std::vector<int64_t> labels;
      for (auto i : idx) labels.push_back(samples[i].label);
      auto out = res.model(batch(idx));
      auto loss = torch::nn::functional::cross_entropy(out.logits, torch::tensor(labels, torch::kLong));
      opt.zero_grad();
      loss.backward();
      opt.step();
      total += loss.item<double>() * idx.size();
    }
    res.losses.push_back(total / samples.size());
    if (log) *log << "fusion epoch " << e + 1 << " loss " << res.losses.back() << '\n';
  }

  torch::NoGradGuard ng;
  res.model->eval();
  for (size_t s = 0; s < samples.size(); s += cfg.batch_size) {
    std::vector<size_t> idx;
    for (size_t i = s; i < std::min(samples.size(), s + cfg.batch_size); ++i) idx.push_back(i);
    auto logits = res.model(batch(idx)).logits.to(torch::kFloat64);
    for (size_t b = 0; b < idx.size(); ++b) {
      auto row = logits[b].contiguous();
      std::vector<double> l(row.data_ptr<double>(), row.data_ptr<double>() + row.numel());
      res.predictions.push_back({samples[idx[b]].video_id, l, argmax_lowest(row), samples[idx[b]].label});
    }
  }
  res.report = compute_report(res.predictions, num_classes);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_predictions(res.predictions, out_dir / "predictions.jsonl");
    std::ofstream(out_dir / "eval.json") << to_json(res.report).dump(2) << '\n';
    std::ofstream(out_dir / "fuse_config.json") << to_json(cfg).dump(2) << '\n';
  }
  return res;
}

}  // namespace vemd
