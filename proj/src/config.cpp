#include "vemd/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "vemd/annotations.hpp"
#include "vemd/common.hpp"
#include "vemd/skeleton.hpp"

namespace vemd {

using json = nlohmann::json;

std::string to_string(DecoderKind d) {
  switch (d) {
    case DecoderKind::None: return "none";
    case DecoderKind::PersonQuery: return "personquery";
    case DecoderKind::Heatmap: return "heatmap";
  }
  return "?";
}

std::string to_string(SrModality m) {
  switch (m) {
    case SrModality::Body: return "body";
    case SrModality::Face: return "face";
    case SrModality::BodyFace: return "body+face";
  }
  return "?";
}

DecoderKind decoder_from_string(const std::string& s) {
  if (s == "none" || s == "ve-sd") return DecoderKind::None;
  if (s == "personquery") return DecoderKind::PersonQuery;
  if (s == "heatmap") return DecoderKind::Heatmap;
  throw ConfigError("unknown decoder '" + s + "' (none, personquery, heatmap)");
}

SrModality modality_from_string(const std::string& s) {
  if (s == "body") return SrModality::Body;
  if (s == "face") return SrModality::Face;
  if (s == "body+face") return SrModality::BodyFace;
  throw ConfigError("unknown SR modality '" + s + "' (body, face, body+face)");
}

std::vector<std::string> sr_skeletons(DecoderKind decoder, SrModality modality) {
  if (decoder == DecoderKind::None) return {};
  const std::string face = decoder == DecoderKind::Heatmap ? kFaceDenseSkeleton : kFaceQuerySkeleton;
  switch (modality) {
    case SrModality::Body: return {kBodySkeleton};
    case SrModality::Face: return {face};
    case SrModality::BodyFace: return {kBodySkeleton, face};
  }
  return {};
}

std::string Projection::label() const {
  if (raw) return "raw";
  char buf[32];
  std::snprintf(buf, sizeof buf, "x%g", factor);
  return buf;
}

SrMode ExperimentConfig::sr_mode() const {
  if (!sr_to_decoder || decoder == DecoderKind::None) return SrMode::None;
  return projection.raw ? SrMode::Raw : SrMode::Projected;
}

void ExperimentConfig::validate() const {
  encoder.validate();
  weights.validate();
  if (stgcn && decoder != DecoderKind::PersonQuery) {
    throw ConfigError("stgcn refinement requires the personquery decoder");
  }
  if (sr_to_decoder && decoder == DecoderKind::None) {
    throw ConfigError("sr_to_decoder needs a structural decoder (decoder is none)");
  }
  if (!projection.raw) {
    bool ok = false;
    for (double f : kProjectionFactors) ok = ok || std::abs(f - projection.factor) < 1e-12;
    if (!ok) throw ConfigError("projection factor must be one of 0.5, 1, 2, 3, 4");
  }
  if (query_policy.mode == QueryPolicy::Mode::Fixed && query_policy.value < 1) {
    throw ConfigError("query count must be >= 1");
  }
  if (!encoder.variational && weights.beta_mmd != 0.0) {
    throw ConfigError("a non-variational encoder requires beta_mmd = 0");
  }
  if (frames_per_video < 1) throw ConfigError("frames_per_video must be >= 1");
  if (epochs < 0 || batch_size < 1) throw ConfigError("epochs must be >= 0 and batch_size >= 1");
  if (!(optimizer.lr > 0.0) || !std::isfinite(optimizer.lr)) throw ConfigError("learning rate must be positive");
  if (optimizer.name != "adam") throw ConfigError("unsupported optimizer '" + optimizer.name + "' (adam)");
  if (target_train_accuracy < 0.0 || target_train_accuracy > 1.0) {
    throw ConfigError("target_train_accuracy must lie in [0,1]");
  }
  if (context_warmup_epochs < 0 || max_steps < 0 || limit_videos < 0) {
    throw ConfigError("counts must be nonnegative");
  }
  if (!(heatmap_sigma > 0.0)) throw ConfigError("heatmap_sigma must be positive");
  for (int w : scale.heatmap_widths)
    if (w < 1) throw ConfigError("heatmap widths must be positive");
  if (scale.heatmap_limbs_width < 1 || scale.heatmap_stages < 0 || scale.heatmap_convs_per_stage < 1 ||
      scale.query_dim < 1 || scale.query_heads < 1 || scale.query_layers < 1 || scale.temporal_dim < 0 ||
      scale.temporal_layers < 1 || scale.temporal_heads < 1 || scale.stgcn_hidden < 1) {
    throw ConfigError("model scale entries must be positive");
  }
  if (scale.query_dim % scale.query_heads != 0) throw ConfigError("query_dim must be divisible by query_heads");
}

ExperimentConfig default_experiment() {
  ExperimentConfig c;
  c.encoder.latent_channels = 16;
  c.encoder.width = 8;
  c.encoder.context_dim = 32;
  c.encoder.context_heads = 4;
  return c;
}

namespace {

json projection_json(const Projection& p) {
  if (p.raw) return "raw";
  return p.factor;
}

Projection projection_from(const json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "raw") return Projection::raw_input();
    throw ConfigError("projection must be \"raw\" or a factor");
  }
  if (j.is_number()) return Projection::scaled(j.get<double>());
  throw ConfigError("projection must be \"raw\" or a factor");
}

json query_json(const QueryPolicy& q) {
  if (q.mode == QueryPolicy::Mode::QMax) return "Q_Max";
  return q.value;
}

QueryPolicy query_from(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "Q_Max" || s == "qmax" || s == "max") return QueryPolicy::q_max();
    throw ConfigError("query_policy must be \"Q_Max\" or an integer");
  }
  if (j.is_number_integer()) return QueryPolicy::fixed(j.get<int>());
  throw ConfigError("query_policy must be \"Q_Max\" or an integer");
}

json scale_json(const ModelScale& s) {
  return {{"heatmap_widths", s.heatmap_widths},
          {"heatmap_limbs_width", s.heatmap_limbs_width},
          {"heatmap_stages", s.heatmap_stages},
          {"heatmap_convs_per_stage", s.heatmap_convs_per_stage},
          {"query_dim", s.query_dim},
          {"query_heads", s.query_heads},
          {"query_layers", s.query_layers},
          {"stgcn_hidden", s.stgcn_hidden},
          {"temporal_dim", s.temporal_dim},
          {"temporal_layers", s.temporal_layers},
          {"temporal_heads", s.temporal_heads}};
}

template <typename T>
void take(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

ModelScale scale_from(const json& j) {
  static const std::set<std::string> known{
      "heatmap_widths", "heatmap_limbs_width", "heatmap_stages", "heatmap_convs_per_stage",
      "query_dim", "query_heads", "query_layers", "stgcn_hidden", "temporal_dim",
      "temporal_layers", "temporal_heads"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown scale key '" + k + "'");
  ModelScale s;
  take(j, "heatmap_widths", s.heatmap_widths);
  take(j, "heatmap_limbs_width", s.heatmap_limbs_width);
  take(j, "heatmap_stages", s.heatmap_stages);
  take(j, "heatmap_convs_per_stage", s.heatmap_convs_per_stage);
  take(j, "query_dim", s.query_dim);
  take(j, "query_heads", s.query_heads);
  take(j, "query_layers", s.query_layers);
  take(j, "stgcn_hidden", s.stgcn_hidden);
  take(j, "temporal_dim", s.temporal_dim);
  take(j, "temporal_layers", s.temporal_layers);
  take(j, "temporal_heads", s.temporal_heads);
  return s;
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  return {{"name", c.name},
          {"dataset", c.dataset},
          {"decoder", to_string(c.decoder)},
          {"sr_to_decoder", c.sr_to_decoder},
          {"sr_modality", to_string(c.sr_modality)},
          {"projection", projection_json(c.projection)},
          {"query_policy", query_json(c.query_policy)},
          {"stgcn", c.stgcn},
          {"loss_weights", to_json(c.weights)},
          {"frames_per_video", c.frames_per_video},
          {"optimizer", {{"name", c.optimizer.name}, {"lr", c.optimizer.lr}}},
          {"seed", c.seed},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"target_train_accuracy", c.target_train_accuracy},
          {"context_warmup_epochs", c.context_warmup_epochs},
          {"max_steps", c.max_steps},
          {"limit_videos", c.limit_videos},
          {"heatmap_sigma", c.heatmap_sigma},
          {"detach_sr", c.detach_sr},
          {"encoder", to_json(c.encoder)},
          {"scale", scale_json(c.scale)}};
}

ExperimentConfig experiment_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be an object");
  static const std::set<std::string> known{
      "name", "dataset", "decoder", "sr_to_decoder", "sr_modality", "projection", "query_policy",
      "stgcn", "loss_weights", "frames_per_video", "optimizer", "seed", "epochs", "batch_size",
      "target_train_accuracy", "context_warmup_epochs", "max_steps", "limit_videos",
      "heatmap_sigma", "detach_sr", "encoder", "scale"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
  ExperimentConfig c = default_experiment();
  try {
    take(j, "name", c.name);
    take(j, "dataset", c.dataset);
    if (j.contains("decoder")) c.decoder = decoder_from_string(j.at("decoder").get<std::string>());
    take(j, "sr_to_decoder", c.sr_to_decoder);
    if (j.contains("sr_modality")) c.sr_modality = modality_from_string(j.at("sr_modality").get<std::string>());
    if (j.contains("projection")) c.projection = projection_from(j.at("projection"));
    if (j.contains("query_policy")) c.query_policy = query_from(j.at("query_policy"));
    take(j, "stgcn", c.stgcn);
    if (j.contains("encoder")) {
      json enc = to_json(c.encoder);
      enc.update(j.at("encoder"));
      c.encoder = encoder_config_from_json(enc);
    }
    const LossWeights defaults =
        c.decoder == DecoderKind::PersonQuery ? LossWeights::personquery_defaults() : LossWeights::heatmap_defaults();
    c.weights = defaults;
    if (!c.encoder.variational) c.weights.beta_mmd = 0.0;
    if (j.contains("loss_weights")) c.weights = loss_weights_from_json(j.at("loss_weights"), c.weights);
    take(j, "frames_per_video", c.frames_per_video);
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      take(o, "name", c.optimizer.name);
      take(o, "lr", c.optimizer.lr);
    }
    take(j, "seed", c.seed);
    take(j, "epochs", c.epochs);
    take(j, "batch_size", c.batch_size);
    take(j, "target_train_accuracy", c.target_train_accuracy);
    take(j, "context_warmup_epochs", c.context_warmup_epochs);
    take(j, "max_steps", c.max_steps);
    take(j, "limit_videos", c.limit_videos);
    take(j, "heatmap_sigma", c.heatmap_sigma);
    take(j, "detach_sr", c.detach_sr);
    if (j.contains("scale")) c.scale = scale_from(j.at("scale"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  auto cfg = experiment_from_json(j);
  if (!cfg.dataset.empty()) {
    std::filesystem::path d(cfg.dataset);
    if (d.is_relative()) cfg.dataset = (path.parent_path() / d).lexically_normal().string();
  }
  return cfg;
}

std::string canonical_string(const ExperimentConfig& cfg) {
  json j = to_json(cfg);
  j.erase("name");
  return j.dump();  // object keys are sorted
}

std::string config_hash(const ExperimentConfig& cfg) { return to_hex(fnv1a64(canonical_string(cfg))); }

std::vector<int64_t> sr_raw_dims(const ExperimentConfig& cfg, const std::vector<int>& queries) {
  std::vector<int64_t> dims;
  const auto skels = sr_skeletons(cfg.decoder, cfg.sr_modality);
  const int64_t hs = 8LL * cfg.encoder.latent_size;
  for (size_t i = 0; i < skels.size(); ++i) {
    if (cfg.decoder == DecoderKind::Heatmap) {
      dims.push_back(hs * hs);
    } else {
      if (i >= queries.size()) throw ArgumentError("missing query count for " + skels[i]);
      const int limbs = SkeletonRegistry::builtin().get(skels[i]).num_limbs();
      dims.push_back(4LL * queries[i] * limbs);
    }
  }
  return dims;
}

int64_t embedding_size(const ExperimentConfig& cfg, const std::vector<int>& queries) {
  const auto mode = cfg.sr_mode();
  const auto dims = mode == SrMode::None ? std::vector<int64_t>{} : sr_raw_dims(cfg, queries);
  return frame_vector_dim(cfg.encoder.latent_channels, mode, dims, cfg.projection.factor);
}

}  // namespace vemd
