#include "vemd/encoder.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "vemd/common.hpp"

namespace vemd {

namespace nn = torch::nn;
using nlohmann::json;

std::string to_string(ContextBackbone b) {
  return b == ContextBackbone::ToyPatchTransformer ? "toy-patch-transformer" : "toy-conv";
}

std::string to_string(MultitaskBackbone b) {
  return b == MultitaskBackbone::CustomResidual ? "custom-residual" : "standard-residual-cnn";
}

ContextBackbone context_backbone_from_string(const std::string& s) {
  if (s == "toy-patch-transformer") return ContextBackbone::ToyPatchTransformer;
  if (s == "toy-conv") return ContextBackbone::ToyConv;
  throw ConfigError("unknown context backbone '" + s + "'");
}

MultitaskBackbone multitask_backbone_from_string(const std::string& s) {
  if (s == "custom-residual") return MultitaskBackbone::CustomResidual;
  if (s == "standard-residual-cnn") return MultitaskBackbone::StandardResidualCnn;
  throw ConfigError("unknown multitask backbone '" + s + "'");
}

void EncoderConfig::validate() const {
  if (latent_channels < 1) throw ConfigError("latent_channels must be >= 1");
  if (latent_size < 1) throw ConfigError("latent_size must be >= 1");
  if (input_size % latent_size != 0) {
    throw ConfigError("input_size must be a multiple of latent_size");
  }
  const int ratio = input_size / latent_size;
  if (ratio != 32) throw ConfigError("encoder reduces by exactly 32x (e.g. 224 -> 7)");
  if (width < 1 || context_dim < 1 || context_layers < 1 || context_heads < 1) {
    throw ConfigError("encoder widths must be positive");
  }
  if (context_dim % context_heads != 0) {
    throw ConfigError("context_dim must be divisible by context_heads");
  }
}

json to_json(const EncoderConfig& c) {
  return {{"context_backbone", to_string(c.context_backbone)},
          {"multitask_backbone", to_string(c.multitask_backbone)},
          {"context_frozen", c.context_frozen},
          {"variational", c.variational},
          {"latent_channels", c.latent_channels},
          {"latent_size", c.latent_size},
          {"input_size", c.input_size},
          {"width", c.width},
          {"context_dim", c.context_dim},
          {"context_layers", c.context_layers},
          {"context_heads", c.context_heads}};
}

EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig c;
  if (j.contains("context_backbone"))
    c.context_backbone = context_backbone_from_string(j.at("context_backbone").get<std::string>());
  if (j.contains("multitask_backbone"))
    c.multitask_backbone =
        multitask_backbone_from_string(j.at("multitask_backbone").get<std::string>());
  c.context_frozen = j.value("context_frozen", c.context_frozen);
  c.variational = j.value("variational", c.variational);
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.latent_size = j.value("latent_size", c.latent_size);
  c.input_size = j.value("input_size", c.input_size);
  c.width = j.value("width", c.width);
  c.context_dim = j.value("context_dim", c.context_dim);
  c.context_layers = j.value("context_layers", c.context_layers);
  c.context_heads = j.value("context_heads", c.context_heads);
  return c;
}

ResidualBlockImpl::ResidualBlockImpl(int in_channels, int out_channels) {
  conv1 = register_module(
      "conv1", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 3).stride(2).padding(1)));
  bn1 = register_module("bn1", nn::BatchNorm2d(out_channels));
  conv2 = register_module(
      "conv2", nn::Conv2d(nn::Conv2dOptions(out_channels, out_channels, 3).stride(1).padding(1)));
  bn2 = register_module("bn2", nn::BatchNorm2d(out_channels));
  skip = register_module("skip",
                         nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 1).stride(2)));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4) throw ShapeError("residual block expects (N, C, H, W)");
  if (x.size(2) % 2 != 0 || x.size(3) % 2 != 0) {
    throw ShapeError("residual block needs even spatial dims, got " + std::to_string(x.size(2)) +
                     "x" + std::to_string(x.size(3)));
  }
  auto main = torch::elu(bn1(conv1(x)));
  main = bn2(conv2(main));
  return torch::elu(main + skip(x));
}

torch::Tensor sinusoidal_positions(int64_t length, int64_t dim, torch::Dtype dtype) {
  auto pos = torch::arange(length, torch::kFloat64).unsqueeze(1);
  auto i = torch::arange(dim, torch::kFloat64).unsqueeze(0);
  auto rates = torch::pow(10000.0, -2.0 * torch::floor(i / 2.0) / static_cast<double>(dim));
  auto angles = pos * rates;
  auto even = (torch::arange(dim) % 2 == 0).unsqueeze(0);
  return torch::where(even, torch::sin(angles), torch::cos(angles)).to(dtype);
}

ContextBranchImpl::ContextBranchImpl(const EncoderConfig& cfg)
    : kind_(cfg.context_backbone), grid_(cfg.latent_size) {
  const int patch = cfg.input_size / cfg.latent_size;
  if (kind_ == ContextBackbone::ToyPatchTransformer) {
    patch_embed = register_module(
        "patch_embed", nn::Conv2d(nn::Conv2dOptions(3, cfg.context_dim, patch).stride(patch)));
    auto layer = nn::TransformerEncoderLayer(
        nn::TransformerEncoderLayerOptions(cfg.context_dim, cfg.context_heads)
            .dim_feedforward(2 * cfg.context_dim)
            .dropout(0.0));
    transformer = register_module(
        "transformer",
        nn::TransformerEncoder(nn::TransformerEncoderOptions(layer, cfg.context_layers)));
  } else {
    conv_stack = register_module("conv_stack", nn::Sequential());
    int in = 3;
    for (int s = 0; s < 5; ++s) {
      conv_stack->push_back(
          nn::Conv2d(nn::Conv2dOptions(in, cfg.context_dim, 3).stride(2).padding(1)));
      conv_stack->push_back(nn::ReLU());
      in = cfg.context_dim;
    }
  }
  reduce = register_module("reduce",
                           nn::Conv2d(nn::Conv2dOptions(cfg.context_dim, cfg.latent_channels, 1)));
}

torch::Tensor ContextBranchImpl::backbone(const torch::Tensor& frames) {
  if (kind_ == ContextBackbone::ToyConv) return conv_stack->forward(frames - 0.5);
  auto tokens = patch_embed(frames - 0.5);  // (N, E, g, g)
  const auto n = tokens.size(0), e = tokens.size(1);
  auto seq = tokens.flatten(2).permute({2, 0, 1});  // (g*g, N, E)
  seq = seq + sinusoidal_positions(seq.size(0), e, seq.scalar_type()).unsqueeze(1);
  seq = transformer(seq);
  return seq.permute({1, 2, 0}).reshape({n, e, grid_, grid_});
}

torch::Tensor ContextBranchImpl::forward(const torch::Tensor& frames) {
  return reduce(backbone(frames));
}

torch::Tensor ContextBranchImpl::pooled_features(const torch::Tensor& frames) {
  return backbone(frames).mean({2, 3});
}

MultitaskBranchImpl::MultitaskBranchImpl(const EncoderConfig& cfg) {
  body = register_module("body", nn::Sequential());
  const int w = cfg.width;
  int out = w;
  if (cfg.multitask_backbone == MultitaskBackbone::CustomResidual) {
    // 224 -> 112 -> 56 -> 28 -> 14 -> 7 with stacked residual downsampling blocks.
    const int widths[] = {w, 2 * w, 4 * w, 8 * w, 8 * w};
    int in = 3;
    for (int c : widths) {
      body->push_back(ResidualBlock(in, c));
      in = c;
    }
    out = in;
  } else {
    // ResNet-style: 7x7/2 stem + max-pool (-> 56), then basic blocks, three
    // of them stride-2 residual stages (-> 7).
    body->push_back(nn::Conv2d(nn::Conv2dOptions(3, w, 7).stride(2).padding(3).bias(false)));
    body->push_back(nn::BatchNorm2d(w));
    body->push_back(nn::ReLU());
    body->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(3).stride(2).padding(1)));
    body->push_back(nn::Conv2d(nn::Conv2dOptions(w, w, 3).padding(1)));
    body->push_back(nn::BatchNorm2d(w));
    body->push_back(nn::ReLU());
    const int widths[] = {2 * w, 4 * w, 8 * w};
    int in = w;
    for (int c : widths) {
      body->push_back(ResidualBlock(in, c));
      in = c;
    }
    out = in;
  }
  reduce = register_module("reduce",
                           nn::Conv2d(nn::Conv2dOptions(out, cfg.latent_channels, 1)));
}

torch::Tensor MultitaskBranchImpl::forward(const torch::Tensor& frames) {
  return reduce(body->forward(frames - 0.5));
}

VariationalEncoderImpl::VariationalEncoderImpl(const EncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  context = register_module("context", ContextBranch(cfg_));
  multitask = register_module("multitask", MultitaskBranch(cfg_));
}

LatentPair VariationalEncoderImpl::forward(const torch::Tensor& frames) {
  if (frames.dim() != 4 || frames.size(1) != 3 || frames.size(2) != cfg_.input_size ||
      frames.size(3) != cfg_.input_size) {
    throw ShapeError("encoder expects (N, 3, " + std::to_string(cfg_.input_size) + ", " +
                     std::to_string(cfg_.input_size) + ") frames, got " +
                     c10::str(frames.sizes()));
  }
  LatentPair out;
  if (frozen_) {
    torch::NoGradGuard no_grad;
    out.z1 = context(frames);
  } else {
    out.z1 = context(frames);
  }
  out.z2 = multitask(frames);
  return out;
}

void VariationalEncoderImpl::freeze_context() {
  frozen_ = true;
  for (auto& p : context->parameters()) p.set_requires_grad(false);
  context->eval();
}

void VariationalEncoderImpl::train(bool on) {
  torch::nn::Module::train(on);
  if (frozen_) context->eval();
}

namespace {

torch::Tensor pairwise_sq_dists(const torch::Tensor& a, const torch::Tensor& b) {
  auto an = (a * a).sum(1, true);
  auto bn = (b * b).sum(1, true).transpose(0, 1);
  return (an + bn - 2.0 * torch::mm(a, b.transpose(0, 1))).clamp_min(0.0);
}

}  // namespace

double median_bandwidth(const torch::Tensor& x, const torch::Tensor& y) {
  torch::NoGradGuard no_grad;
  auto joint = torch::cat({x, y}, 0).to(torch::kFloat64);
  auto d = pairwise_sq_dists(joint, joint);
  const auto n = joint.size(0);
  auto offdiag = d.masked_select(~torch::eye(n, torch::kBool));
  const double med = offdiag.numel() ? offdiag.median().item<double>() : 0.0;
  return med > 1e-12 ? std::sqrt(med) : 1.0;
}

torch::Tensor mmd_loss(const torch::Tensor& x, const torch::Tensor& y,
                       std::optional<double> bandwidth) {
  if (x.dim() != 2 || y.dim() != 2) throw ShapeError("mmd_loss expects (n, d) samples");
  if (x.size(0) < 2 || y.size(0) < 2) throw ArgumentError("mmd_loss needs n >= 2 samples");
  if (x.size(1) != y.size(1)) throw ShapeError("mmd_loss: sample dimensions differ");
  const double b = bandwidth.value_or(median_bandwidth(x, y));
  if (!(b > 0.0)) throw ArgumentError("mmd_loss: bandwidth must be positive");
  const double gamma = 1.0 / (2.0 * b * b);
  auto kxx = torch::exp(-gamma * pairwise_sq_dists(x, x)).mean();
  auto kyy = torch::exp(-gamma * pairwise_sq_dists(y, y)).mean();
  auto kxy = torch::exp(-gamma * pairwise_sq_dists(x, y)).mean();
  return (kxx + kyy - 2.0 * kxy).clamp_min(0.0);
}

}  // namespace vemd
