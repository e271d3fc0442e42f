#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "vemd/encoder.hpp"
#include "vemd/skeleton.hpp"

namespace vemd {

// How many person queries the PersonQuery decoder carries.
struct QueryPolicy {
  enum class Mode { QMax, Fixed };
  Mode mode = Mode::Fixed;
  int value = 50;  // for Fixed

  static QueryPolicy q_max() { return {Mode::QMax, 0}; }
  static QueryPolicy fixed(int q) { return {Mode::Fixed, q}; }

  // Query count given the dataset's maximum annotated persons per frame.
  int resolve(int dataset_max_persons) const;
  std::string label() const;  // "Q_Max" or "Q_<n>"
  bool operator==(const QueryPolicy&) const = default;
};

struct PersonQueryOptions {
  int latent_channels = 512;
  int latent_size = 7;
  int num_limbs = 18;
  int num_queries = 50;
  int model_dim = 256;  // D
  int heads = 8;
  int encoder_layers = 3;
  int decoder_layers = 3;
};

struct PersonQueryOutput {
  torch::Tensor limbs;      // L_pred (N, Q, 4 * num_limbs) in [0,1]
  torch::Tensor adjacency;  // A_pred (N, Q, num_limbs, num_limbs) in [0,1]
};

// Set-prediction decoder: an auxiliary residual conv module yields features
// at three scales, flattened with sinusoidal positions into a transformer
// encoder; learnable queries run through a transformer decoder into a limb
// MLP head and an adjacency FC head (both sigmoid).
// Post-norm transformer encoder layer (ReLU feed-forward, no dropout) whose
// self-attention goes through the fused SDPA kernel, so backward does not keep
// the (S, S) attention matrix around. Input (S, N, D).
class TokenEncoderLayerImpl : public torch::nn::Module {
 public:
  TokenEncoderLayerImpl(int dim, int heads, int feedforward);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Linear in_proj{nullptr}, out_proj{nullptr}, linear1{nullptr}, linear2{nullptr};
  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};

 private:
  int heads_;
};
TORCH_MODULE(TokenEncoderLayer);

class PersonQueryDecoderImpl : public torch::nn::Module {
 public:
  explicit PersonQueryDecoderImpl(const PersonQueryOptions& opts);

  // z2: (N, C_z, 7, 7) or a single (C_z, 7, 7).
  PersonQueryOutput forward(const torch::Tensor& z2);
  // As forward, after checking the skeleton matches the constructed heads.
  PersonQueryOutput decode(const torch::Tensor& z2, const Skeleton& skeleton);
  // The three multi-scale feature maps (coarse to fine: 7, 14, 28).
  std::array<torch::Tensor, 3> multiscale_features(const torch::Tensor& z2);

  const PersonQueryOptions& options() const { return opts_; }
  int num_limbs() const { return opts_.num_limbs; }

 private:
  PersonQueryOptions opts_;
  torch::nn::Conv2d stem{nullptr};
  torch::nn::BatchNorm2d stem_bn{nullptr};
  ResidualBlock down1{nullptr}, down2{nullptr};
  torch::nn::ModuleList encoder{nullptr};  // TokenEncoderLayer stack
  torch::nn::TransformerDecoder decoder{nullptr};
  torch::Tensor queries;
  torch::nn::Sequential limb_head{nullptr};
  torch::nn::Linear adjacency_head{nullptr};
};
TORCH_MODULE(PersonQueryDecoder);

struct StgcnOptions {
  int num_limbs = 18;
  int node_in = 4;  // limb endpoint coordinates
  int hidden = 16;
  int node_out = 4;
  int blocks = 2;
  int temporal_kernel = 3;
  double adjacency_threshold = 0.5;
};

// One spatial graph conv (row-normalized adjacency with self loops, then a
// per-node linear map) followed by one temporal conv over frames.
class StgcnBlockImpl : public torch::nn::Module {
 public:
  StgcnBlockImpl(int in_dim, int out_dim, int temporal_kernel, bool last);

  // x: (B, T, Q, L, C), adj: (B, T, Q, L, L) binary.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& adj);
  torch::Tensor spatial(const torch::Tensor& x, const torch::Tensor& adj);
  torch::Tensor temporal(const torch::Tensor& x);

  torch::nn::Linear node_map{nullptr};
  torch::nn::Conv1d time_conv{nullptr};

 private:
  bool last_;
};
TORCH_MODULE(StgcnBlock);

// Row-normalized adjacency with self loops: D^-1 (A with unit diagonal).
torch::Tensor normalize_adjacency(const torch::Tensor& adj);

class StgcnImpl : public torch::nn::Module {
 public:
  explicit StgcnImpl(const StgcnOptions& opts);

  // limbs: (T, Q, 4L) or (B, T, Q, 4L); adjacency: (T, Q, L, L) or (B, T, Q, L, L).
  // Returns refined features with the same leading dims and feat_dim = L * node_out.
  torch::Tensor forward(const torch::Tensor& limbs, const torch::Tensor& adjacency);
  int feat_dim() const { return opts_.num_limbs * opts_.node_out; }

  torch::nn::ModuleList blocks{nullptr};

 private:
  StgcnOptions opts_;
};
TORCH_MODULE(Stgcn);

struct HeatmapDecoderOptions {
  int latent_channels = 512;  // d
  int latent_size = 7;
  int out_channels = 18;      // C_out = number of limbs
  // Channel ladder of the UNet-upsample: up5 output, ResUp output, up3, up2.
  std::array<int, 4> widths{2048, 512, 256, 128};
  int limbs_width = 256;
  int stages = 6;
  int convs_per_stage = 5;
};

struct TraceRow {
  std::string stage;
  std::vector<int64_t> shape;  // per-sample (C, H, W)
};

// x2 up-block: transpose-conv main path plus nearest-upsample 1x1 skip.
class ResUpImpl : public torch::nn::Module {
 public:
  ResUpImpl(int in_channels, int out_channels);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::ConvTranspose2d up{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr};
  torch::nn::Conv2d conv{nullptr};
  torch::nn::BatchNorm2d bn2{nullptr};
  torch::nn::Conv2d skip{nullptr};
};
TORCH_MODULE(ResUp);

// Dense limb-heatmap decoder: UNet-upsample (7 -> 56) then a staged limbs decoder.
class HeatmapDecoderImpl : public torch::nn::Module {
 public:
  explicit HeatmapDecoderImpl(const HeatmapDecoderOptions& opts);

  // z: (N, d, 7, 7) or (d, 7, 7) -> (N, C_out, 56, 56).
  torch::Tensor forward(const torch::Tensor& z);
  // Same computation, recording each stage's output shape.
  torch::Tensor forward_traced(const torch::Tensor& z, std::vector<TraceRow>* trace);

  const HeatmapDecoderOptions& options() const { return opts_; }

 private:
  HeatmapDecoderOptions opts_;
  torch::nn::Conv2d up5{nullptr};
  ResUp up4{nullptr};
  torch::nn::Sequential dec4{nullptr}, dec3{nullptr}, dec2{nullptr}, dec1{nullptr};
  torch::nn::ConvTranspose2d up3{nullptr}, up2{nullptr}, up1{nullptr};
  torch::nn::Conv2d final_conv{nullptr};
  torch::nn::Conv2d limbs_entry{nullptr};
  torch::nn::ModuleList limbs_stages{nullptr};
  torch::nn::Conv2d limbs_head{nullptr};
};
TORCH_MODULE(HeatmapDecoder);

int64_t count_parameters(torch::nn::Module& module);

}  // namespace vemd
