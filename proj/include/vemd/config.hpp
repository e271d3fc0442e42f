#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vemd/emotion_head.hpp"
#include "vemd/encoder.hpp"
#include "vemd/losses.hpp"
#include "vemd/sr_decoders.hpp"

namespace vemd {

enum class DecoderKind { None, PersonQuery, Heatmap };
enum class SrModality { Body, Face, BodyFace };

std::string to_string(DecoderKind d);
std::string to_string(SrModality m);
DecoderKind decoder_from_string(const std::string& s);
SrModality modality_from_string(const std::string& s);

// Skeleton names fed to the decoder for each modality, in order.
std::vector<std::string> sr_skeletons(DecoderKind decoder, SrModality modality);

struct Projection {
  bool raw = true;
  double factor = 1.0;

  static Projection raw_input() { return {true, 1.0}; }
  static Projection scaled(double f) { return {false, f}; }
  std::string label() const;  // "raw" or "x<factor>"
  bool operator==(const Projection&) const = default;
};

inline constexpr std::array<double, 5> kProjectionFactors{0.5, 1.0, 2.0, 3.0, 4.0};

struct OptimizerConfig {
  std::string name = "adam";
  double lr = 1e-4;
  bool operator==(const OptimizerConfig&) const = default;
};

inline constexpr double kFullScaleLearningRate = 1e-7;

// Desk-scale widths for the structural decoders and the emotion head.
struct ModelScale {
  std::array<int, 4> heatmap_widths{64, 32, 16, 16};
  int heatmap_limbs_width = 8;
  int heatmap_stages = 6;
  int heatmap_convs_per_stage = 5;
  int query_dim = 32;
  int query_heads = 4;
  int query_layers = 3;
  int stgcn_hidden = 16;
  int temporal_dim = 64;  // 0 = frame-vector width
  int temporal_layers = 2;
  int temporal_heads = 8;
  bool operator==(const ModelScale&) const = default;
};

struct ExperimentConfig {
  std::string name;
  std::string dataset;  // manifest path
  DecoderKind decoder = DecoderKind::Heatmap;
  bool sr_to_decoder = false;
  SrModality sr_modality = SrModality::BodyFace;
  Projection projection;
  QueryPolicy query_policy = QueryPolicy::q_max();
  bool stgcn = false;
  LossWeights weights = LossWeights::heatmap_defaults();
  int frames_per_video = 5;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  int epochs = 50;
  int batch_size = 8;
  // Stop once training accuracy reaches this value (0 disables).
  double target_train_accuracy = 0.0;
  // Steps of classification warm-up for the context branch before freezing.
  int context_warmup_epochs = 1;
  int max_steps = 0;     // 0 = unlimited
  int limit_videos = 0;  // 0 = whole manifest
  double heatmap_sigma = 2.0;
  bool detach_sr = false;
  EncoderConfig encoder;
  ModelScale scale;

  // Throws ConfigError on illegal combinations.
  void validate() const;
  bool uses_sr_decoder() const { return decoder != DecoderKind::None; }
  SrMode sr_mode() const;
};

// Desk defaults: small encoder widths, heatmap decoder, body+face.
ExperimentConfig default_experiment();

nlohmann::json to_json(const ExperimentConfig& cfg);
// Missing keys keep their defaults; loss weights default per decoder.
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment(const std::filesystem::path& path);

// Canonical serialization and its content hash (hex); the name is excluded.
std::string canonical_string(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

// Frame-vector width D for a config given the resolved query counts per
// SR modality (ignored for heatmap/none).
int64_t embedding_size(const ExperimentConfig& cfg, const std::vector<int>& queries_per_modality);
// Raw flattened SR widths fed to the emotion decoder.
std::vector<int64_t> sr_raw_dims(const ExperimentConfig& cfg, const std::vector<int>& queries_per_modality);

}  // namespace vemd
