#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

namespace vemd {

enum class SrMode { None, Raw, Projected };

std::string to_string(SrMode mode);

// Projected SR width C_S = factor * C_z (rounded); factor must be positive.
int64_t projected_sr_dim(int latent_channels, double factor);

// Width of the per-frame joint vector: 2*C_z plus the SR contribution
// (raw flattened dims, or C_S per modality when projected).
int64_t frame_vector_dim(int latent_channels, SrMode mode, const std::vector<int64_t>& sr_raw_dims,
                         double projection_factor = 1.0);

// phi: flattened [Z1_t; Z2_t] -> R^{2 C_z}.
class FuseLatentImpl : public torch::nn::Module {
 public:
  FuseLatentImpl(int latent_channels, int latent_size);
  // z1, z2: (N, C_z, h, w) -> (N, 2 C_z)
  torch::Tensor forward(const torch::Tensor& z1, const torch::Tensor& z2);
  // Square maps only (h = w = 1): weight := I, bias := 0.
  void identity_init();

  torch::nn::Linear phi{nullptr};

 private:
  int latent_channels_;
  int latent_size_;
};
TORCH_MODULE(FuseLatent);

// Softmax-weighted sum of frame vectors: s_i = w^T f_i + b, alpha = softmax(s).
// f: (N, d) or (B, N, d); w: (d); b: scalar. Optionally returns alpha.
torch::Tensor frames_attention_pool(const torch::Tensor& f, const torch::Tensor& w,
                                    const torch::Tensor& b, torch::Tensor* alpha = nullptr);

class FramesAttentionPoolImpl : public torch::nn::Module {
 public:
  explicit FramesAttentionPoolImpl(int dim);
  torch::Tensor forward(const torch::Tensor& f, torch::Tensor* alpha = nullptr);

  torch::nn::Linear score{nullptr};
};
TORCH_MODULE(FramesAttentionPool);

struct EmotionHeadOptions {
  int latent_channels = 512;
  int latent_size = 7;
  int num_classes = 3;
  SrMode sr_mode = SrMode::None;
  double projection_factor = 1.0;
  std::vector<int64_t> sr_raw_dims;  // flattened SR width per fed modality
  int temporal_layers = 2;
  int temporal_heads = 8;
  // 0 keeps the temporal transformer at the frame-vector width D; otherwise
  // a linear map D -> temporal_dim runs first.
  int temporal_dim = 0;
  bool detach_sr = false;
  bool zero_init_classifier = false;
};

struct EmotionOutput {
  torch::Tensor logits;          // (B, num_classes)
  torch::Tensor frame_vectors;   // x_t, (B, T, D)
  torch::Tensor frame_features;  // temporal transformer output, (B, T, d)
  torch::Tensor pooled;          // (B, d)
  torch::Tensor alpha;           // FAP weights (B, T)
};

class EmotionHeadImpl : public torch::nn::Module {
 public:
  explicit EmotionHeadImpl(const EmotionHeadOptions& opts);

  // Builds x_t from the fused latent and the SR inputs per the configured mode.
  torch::Tensor assemble(const torch::Tensor& fused, const std::vector<torch::Tensor>& sr);

  // z1, z2: (B*T, C_z, h, w); sr: per modality (B*T, raw_dim); frames = T.
  EmotionOutput forward(const torch::Tensor& z1, const torch::Tensor& z2,
                        const std::vector<torch::Tensor>& sr, int64_t frames);

  torch::Tensor classify(const torch::Tensor& pooled) { return classifier->forward(pooled); }

  int64_t frame_dim() const { return frame_dim_; }
  int64_t model_dim() const { return model_dim_; }
  const EmotionHeadOptions& options() const { return opts_; }

  FuseLatent fuse{nullptr};
  torch::nn::ModuleList rho{nullptr};
  torch::nn::Linear input_projection{nullptr};
  torch::nn::TransformerEncoder temporal{nullptr};
  FramesAttentionPool pool{nullptr};
  torch::nn::Sequential classifier{nullptr};

 private:
  EmotionHeadOptions opts_;
  int64_t frame_dim_ = 0;
  int64_t model_dim_ = 0;
};
TORCH_MODULE(EmotionHead);

// Argmax with ties broken toward the lowest class index.
int argmax_lowest(const torch::Tensor& logits);

// Largest head count <= preferred that divides dim.
int compatible_heads(int64_t dim, int preferred);

}  // namespace vemd
