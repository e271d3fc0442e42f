#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>
#include <torch/torch.h>

namespace vemd {

enum class ContextBackbone { ToyPatchTransformer, ToyConv };
enum class MultitaskBackbone { CustomResidual, StandardResidualCnn };

std::string to_string(ContextBackbone b);
std::string to_string(MultitaskBackbone b);
ContextBackbone context_backbone_from_string(const std::string& s);
MultitaskBackbone multitask_backbone_from_string(const std::string& s);

struct EncoderConfig {
  ContextBackbone context_backbone = ContextBackbone::ToyPatchTransformer;
  MultitaskBackbone multitask_backbone = MultitaskBackbone::CustomResidual;
  bool context_frozen = true;
  bool variational = true;  // false reproduces the vanilla encoder (beta_mmd = 0)
  int latent_channels = 512;  // C_z
  int latent_size = 7;        // h_z = w_z
  int input_size = 224;
  int width = 64;         // first-stage channels of the multitask branch
  int context_dim = 64;   // token width of the context branch
  int context_layers = 1;
  int context_heads = 4;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

nlohmann::json to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

// Stride-2 residual downsampling block:
//   main = conv3x3/s2 -> BN -> ELU -> conv3x3 -> BN, skip = conv1x1/s2,
//   out = ELU(main + skip).
class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(int in_channels, int out_channels);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
};
TORCH_MODULE(ResidualBlock);

// Sinusoidal position table (length, dim).
torch::Tensor sinusoidal_positions(int64_t length, int64_t dim,
                                   torch::Dtype dtype = torch::kFloat32);

// Frozen context branch (stands in for the ViT): frames -> (N, C_z, 7, 7).
class ContextBranchImpl : public torch::nn::Module {
 public:
  explicit ContextBranchImpl(const EncoderConfig& cfg);
  torch::Tensor forward(const torch::Tensor& frames);
  // Token features before channel reduction, pooled per frame (N, context_dim).
  torch::Tensor pooled_features(const torch::Tensor& frames);

 private:
  torch::Tensor backbone(const torch::Tensor& frames);

  ContextBackbone kind_;
  int grid_;
  torch::nn::Conv2d patch_embed{nullptr};
  torch::nn::TransformerEncoder transformer{nullptr};
  torch::nn::Sequential conv_stack{nullptr};
  torch::nn::Conv2d reduce{nullptr};
};
TORCH_MODULE(ContextBranch);

// Trainable multitask branch (stands in for the ResNet): frames -> (N, C_z, 7, 7).
class MultitaskBranchImpl : public torch::nn::Module {
 public:
  explicit MultitaskBranchImpl(const EncoderConfig& cfg);
  torch::Tensor forward(const torch::Tensor& frames);

 private:
  torch::nn::Sequential body{nullptr};
  torch::nn::Conv2d reduce{nullptr};
};
TORCH_MODULE(MultitaskBranch);

struct LatentPair {
  torch::Tensor z1;  // context features (N, C_z, h_z, w_z)
  torch::Tensor z2;  // multitask features, same shape
};

class VariationalEncoderImpl : public torch::nn::Module {
 public:
  explicit VariationalEncoderImpl(const EncoderConfig& cfg);

  // frames: (N, 3, input_size, input_size) in [0,1].
  LatentPair forward(const torch::Tensor& frames);

  // Stops gradients into the context branch and pins its norm layers.
  void freeze_context();
  bool context_frozen() const { return frozen_; }
  void train(bool on = true) override;

  const EncoderConfig& config() const { return cfg_; }

  ContextBranch context{nullptr};
  MultitaskBranch multitask{nullptr};

 private:
  EncoderConfig cfg_;
  bool frozen_ = false;
};
TORCH_MODULE(VariationalEncoder);

// Median-heuristic RBF bandwidth over the joint batch [x; y].
double median_bandwidth(const torch::Tensor& x, const torch::Tensor& y);

// Biased (V-statistic) squared MMD between two (n, d) samples under an RBF
// kernel exp(-|a-b|^2 / (2 b^2)). Uses the median heuristic when no
// bandwidth is given.
torch::Tensor mmd_loss(const torch::Tensor& x, const torch::Tensor& y,
                       std::optional<double> bandwidth = std::nullopt);

}  // namespace vemd
