#include "vemd/emotion_head.hpp"

#include <cmath>

#include "vemd/common.hpp"
#include "vemd/encoder.hpp"

namespace vemd {

namespace nn = torch::nn;

std::string to_string(SrMode mode) {
  switch (mode) {
    case SrMode::None: return "none";
    case SrMode::Raw: return "raw";
    case SrMode::Projected: return "projected";
  }
  return "?";
}

int64_t projected_sr_dim(int latent_channels, double factor) {
  const auto d = static_cast<int64_t>(std::llround(factor * latent_channels));
  if (!(factor > 0.0) || d <= 0) {
    throw ConfigError("projected SR dimension must be positive (factor " + std::to_string(factor) + ")");
  }
  return d;
}

int64_t frame_vector_dim(int latent_channels, SrMode mode, const std::vector<int64_t>& sr_raw_dims,
                         double projection_factor) {
  int64_t d = 2LL * latent_channels;
  if (mode == SrMode::Raw) {
    for (auto r : sr_raw_dims) d += r;
  } else if (mode == SrMode::Projected) {
    d += static_cast<int64_t>(sr_raw_dims.size()) * projected_sr_dim(latent_channels, projection_factor);
  }
  return d;
}

int compatible_heads(int64_t dim, int preferred) {
  for (int h = std::max(1, preferred); h > 1; --h)
    if (dim % h == 0) return h;
  return 1;
}

FuseLatentImpl::FuseLatentImpl(int latent_channels, int latent_size)
    : latent_channels_(latent_channels), latent_size_(latent_size) {
  const int64_t in = 2LL * latent_channels * latent_size * latent_size;
  phi = register_module("phi", nn::Linear(in, 2LL * latent_channels));
}

torch::Tensor FuseLatentImpl::forward(const torch::Tensor& z1, const torch::Tensor& z2) {
  if (!z1.sizes().equals(z2.sizes())) {
    throw ShapeError("fuse_latent: Z1 " + c10::str(z1.sizes()) + " and Z2 " +
                     c10::str(z2.sizes()) + " differ");
  }
  if (z1.dim() != 4 || z1.size(1) != latent_channels_ || z1.size(2) != latent_size_ ||
      z1.size(3) != latent_size_) {
    throw ShapeError("fuse_latent: unexpected latent shape " + c10::str(z1.sizes()));
  }
  auto flat = torch::cat({z1.flatten(1), z2.flatten(1)}, 1);
  return phi(flat);
}

void FuseLatentImpl::identity_init() {
  if (phi->weight.size(0) != phi->weight.size(1)) {
    throw ConfigError("identity init needs a square projection (latent_size 1)");
  }
  torch::NoGradGuard g;
  phi->weight.copy_(torch::eye(phi->weight.size(0), phi->weight.options()));
  phi->bias.zero_();
}

torch::Tensor frames_attention_pool(const torch::Tensor& f, const torch::Tensor& w,
                                    const torch::Tensor& b, torch::Tensor* alpha) {
  if (f.dim() != 2 && f.dim() != 3) throw ShapeError("FAP expects (N, d) or (B, N, d)");
  if (f.size(-2) < 1) throw ArgumentError("FAP needs at least one frame");
  if (w.numel() != f.size(-1)) throw ShapeError("FAP weight does not match frame width");
  auto s = torch::matmul(f, w.reshape({-1})) + b.reshape({});  // (.., N)
  auto a = torch::softmax(s, -1);
  if (alpha) *alpha = a;
  return (a.unsqueeze(-1) * f).sum(-2);
}

FramesAttentionPoolImpl::FramesAttentionPoolImpl(int dim) {
  score = register_module("score", nn::Linear(dim, 1));
}

torch::Tensor FramesAttentionPoolImpl::forward(const torch::Tensor& f, torch::Tensor* alpha) {
  return frames_attention_pool(f, score->weight, score->bias, alpha);
}

EmotionHeadImpl::EmotionHeadImpl(const EmotionHeadOptions& opts) : opts_(opts) {
  if (opts.num_classes < 1) throw ConfigError("emotion head needs at least one class");
  if (opts.sr_mode != SrMode::None && opts.sr_raw_dims.empty()) {
    throw ConfigError("SR mode '" + to_string(opts.sr_mode) + "' needs at least one SR input");
  }
  frame_dim_ = frame_vector_dim(opts.latent_channels,
                                opts.sr_mode == SrMode::None ? SrMode::None : opts.sr_mode,
                                opts.sr_mode == SrMode::None ? std::vector<int64_t>{} : opts.sr_raw_dims,
                                opts.projection_factor);
  fuse = register_module("fuse", FuseLatent(opts.latent_channels, opts.latent_size));
  rho = register_module("rho", nn::ModuleList());
  if (opts.sr_mode == SrMode::Projected) {
    const auto cs = projected_sr_dim(opts.latent_channels, opts.projection_factor);
    for (auto raw : opts.sr_raw_dims) rho->push_back(nn::Linear(raw, cs));
  }
  model_dim_ = opts.temporal_dim > 0 ? opts.temporal_dim : frame_dim_;
  if (opts.temporal_dim > 0) {
    input_projection = register_module("input_projection", nn::Linear(frame_dim_, model_dim_));
  }
  const int heads = compatible_heads(model_dim_, opts.temporal_heads);
  temporal = register_module(
      "temporal", nn::TransformerEncoder(nn::TransformerEncoderOptions(
                      nn::TransformerEncoderLayerOptions(model_dim_, heads)
                          .dim_feedforward(2 * model_dim_)
                          .dropout(0.0),
                      opts.temporal_layers)));
  pool = register_module("pool", FramesAttentionPool(static_cast<int>(model_dim_)));
  const int64_t h1 = std::max<int64_t>(1, model_dim_ / 2);
  const int64_t h2 = std::max<int64_t>(1, model_dim_ / 4);
  auto last = nn::Linear(h2, opts.num_classes);
  if (opts.zero_init_classifier) {
    torch::NoGradGuard g;
    last->weight.zero_();
    last->bias.zero_();
  }
  classifier = register_module(
      "classifier", nn::Sequential(nn::Linear(model_dim_, h1), nn::ReLU(), nn::Linear(h1, h2),
                                   nn::ReLU(), last));
}

torch::Tensor EmotionHeadImpl::assemble(const torch::Tensor& fused,
                                        const std::vector<torch::Tensor>& sr) {
  std::vector<torch::Tensor> parts{fused};
  if (opts_.sr_mode != SrMode::None) {
    if (sr.size() != opts_.sr_raw_dims.size()) {
      throw ShapeError("emotion head expects " + std::to_string(opts_.sr_raw_dims.size()) +
                       " SR inputs, got " + std::to_string(sr.size()));
    }
    for (size_t i = 0; i < sr.size(); ++i) {
      auto s = sr[i].reshape({sr[i].size(0), -1});
      if (s.size(0) != fused.size(0) || s.size(1) != opts_.sr_raw_dims[i]) {
        throw ShapeError("SR input " + std::to_string(i) + " has shape " + c10::str(s.sizes()) +
                         ", expected width " + std::to_string(opts_.sr_raw_dims[i]));
      }
      if (opts_.detach_sr) s = s.detach();
      if (opts_.sr_mode == SrMode::Projected) s = rho[i]->as<nn::Linear>()->forward(s);
      parts.push_back(s);
    }
  }
  return torch::cat(parts, 1);
}

EmotionOutput EmotionHeadImpl::forward(const torch::Tensor& z1, const torch::Tensor& z2,
                                       const std::vector<torch::Tensor>& sr, int64_t frames) {
  if (frames < 1 || z1.size(0) % frames != 0) {
    throw ShapeError("emotion head: batch of " + std::to_string(z1.size(0)) +
                     " frames is not a multiple of T=" + std::to_string(frames));
  }
  const auto b = z1.size(0) / frames;
  EmotionOutput out;
  auto x = assemble(fuse(z1, z2), sr);  // (B*T, D)
  out.frame_vectors = x.view({b, frames, frame_dim_});
  auto h = out.frame_vectors;
  if (input_projection) h = input_projection(h);
  auto seq = h.transpose(0, 1);  // (T, B, d)
  seq = seq + sinusoidal_positions(frames, model_dim_, seq.scalar_type()).unsqueeze(1);
  out.frame_features = temporal(seq).transpose(0, 1);
  out.pooled = pool(out.frame_features, &out.alpha);
  out.logits = classifier->forward(out.pooled);
  return out;
}

int argmax_lowest(const torch::Tensor& logits) {
  auto v = logits.detach().to(torch::kFloat64).contiguous().view({-1});
  auto acc = v.accessor<double, 1>();
  int best = 0;
  for (int i = 1; i < v.size(0); ++i)
    if (acc[i] > acc[best]) best = i;
  return best;
}

}  // namespace vemd
