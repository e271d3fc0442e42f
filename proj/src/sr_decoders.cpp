#include "vemd/sr_decoders.hpp"

#include "vemd/common.hpp"

namespace vemd {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

int QueryPolicy::resolve(int dataset_max_persons) const {
  const int q = mode == Mode::QMax ? dataset_max_persons : value;
  if (q < 1) throw ConfigError("query count must be >= 1 (got " + std::to_string(q) + ")");
  return q;
}

std::string QueryPolicy::label() const {
  return mode == Mode::QMax ? "Q_Max" : "Q_" + std::to_string(value);
}

namespace {

// Identity whose backward hands a contiguous gradient upstream. BatchNorm's CPU
// backward returns wrong input gradients for channels-last-strided grad_output,
// which is what a permute downstream of it produces.
struct ContiguousGrad : torch::autograd::Function<ContiguousGrad> {
  static torch::Tensor forward(torch::autograd::AutogradContext*, const torch::Tensor& x) {
    return x.view_as(x);
  }
  static torch::autograd::variable_list backward(torch::autograd::AutogradContext*,
                                                 torch::autograd::variable_list grads) {
    return {grads[0].contiguous()};
  }
};

torch::Tensor contiguous_grad(const torch::Tensor& x) { return ContiguousGrad::apply(x); }

torch::Tensor as_batch(const torch::Tensor& z, int channels, int size, const char* who) {
  auto b = z.dim() == 3 ? z.unsqueeze(0) : z;
  if (b.dim() != 4 || b.size(1) != channels || b.size(2) != size || b.size(3) != size) {
    throw ShapeError(std::string(who) + ": expected latent (" + std::to_string(channels) + ", " +
                     std::to_string(size) + ", " + std::to_string(size) + "), got " +
                     c10::str(z.sizes()));
  }
  return b;
}

}  // namespace

TokenEncoderLayerImpl::TokenEncoderLayerImpl(int dim, int heads, int feedforward) : heads_(heads) {
  if (heads < 1 || dim % heads != 0) throw ConfigError("token encoder: dim must be divisible by heads");
  in_proj = register_module("in_proj", nn::Linear(dim, 3 * dim));
  out_proj = register_module("out_proj", nn::Linear(dim, dim));
  linear1 = register_module("linear1", nn::Linear(dim, feedforward));
  linear2 = register_module("linear2", nn::Linear(feedforward, dim));
  norm1 = register_module("norm1", nn::LayerNorm(nn::LayerNormOptions({dim})));
  norm2 = register_module("norm2", nn::LayerNorm(nn::LayerNormOptions({dim})));
}

torch::Tensor TokenEncoderLayerImpl::forward(const torch::Tensor& x) {
  const auto s = x.size(0), n = x.size(1), d = x.size(2);
  const auto hd = d / heads_;
  // (S, N, 3D) -> 3 x (N, H, S, hd)
  auto qkv = in_proj(x).view({s, n, 3, heads_, hd}).permute({2, 1, 3, 0, 4});
  auto att = at::scaled_dot_product_attention(qkv[0], qkv[1], qkv[2]);
  att = att.permute({2, 0, 1, 3}).reshape({s, n, d});
  auto h = norm1(x + out_proj(att));
  return norm2(h + linear2(torch::relu(linear1(h))));
}

PersonQueryDecoderImpl::PersonQueryDecoderImpl(const PersonQueryOptions& opts) : opts_(opts) {
  if (opts.num_queries < 1) throw ConfigError("PersonQuery decoder needs at least one query");
  if (opts.num_limbs < 1) throw ConfigError("PersonQuery decoder needs at least one limb");
  if (opts.model_dim % opts.heads != 0) throw ConfigError("model_dim must be divisible by heads");
  const int d = opts.model_dim;
  stem = register_module("stem", nn::Conv2d(nn::Conv2dOptions(opts.latent_channels, d, 1)));
  stem_bn = register_module("stem_bn", nn::BatchNorm2d(d));
  down1 = register_module("down1", ResidualBlock(d, d));
  down2 = register_module("down2", ResidualBlock(d, d));
  encoder = register_module("encoder", nn::ModuleList());
  for (int i = 0; i < opts.encoder_layers; ++i) encoder->push_back(TokenEncoderLayer(d, opts.heads, 2 * d));
  decoder = register_module(
      "decoder",
      nn::TransformerDecoder(nn::TransformerDecoderOptions(
          nn::TransformerDecoderLayerOptions(d, opts.heads).dim_feedforward(2 * d).dropout(0.0),
          opts.decoder_layers)));
  queries = register_parameter("queries", torch::randn({opts.num_queries, d}) * 0.1);
  const int out = 4 * opts.num_limbs;
  limb_head = register_module(
      "limb_head", nn::Sequential(nn::Linear(d, d), nn::ReLU(), nn::Linear(d, d), nn::ReLU(),
                                  nn::Linear(d, out)));
  adjacency_head =
      register_module("adjacency_head", nn::Linear(d, opts.num_limbs * opts.num_limbs));
}

std::array<torch::Tensor, 3> PersonQueryDecoderImpl::multiscale_features(const torch::Tensor& z2) {
  auto z = as_batch(z2, opts_.latent_channels, opts_.latent_size, "PersonQuery decoder");
  auto up = F::interpolate(z, F::InterpolateFuncOptions()
                                  .scale_factor(std::vector<double>{4.0, 4.0})
                                  .mode(torch::kNearest));
  auto f3 = torch::elu(stem_bn(stem(up)));
  auto f2 = down1(f3);
  auto f1 = down2(f2);
  return {f1, f2, f3};
}

PersonQueryOutput PersonQueryDecoderImpl::forward(const torch::Tensor& z2) {
  auto [f1, f2, f3] = multiscale_features(z2);
  const auto n = f1.size(0);
  const auto d = f1.size(1);
  // (S, N, D) with S = 7*7 + 14*14 + 28*28 tokens.
  auto src = torch::cat({contiguous_grad(f1).flatten(2), contiguous_grad(f2).flatten(2),
                         contiguous_grad(f3).flatten(2)},
                        2)
                 .permute({2, 0, 1});
  src = src + sinusoidal_positions(src.size(0), d, src.scalar_type()).unsqueeze(1);
  auto memory = src;
  for (const auto& layer : *encoder) memory = layer->as<TokenEncoderLayer>()->forward(memory);
  auto tgt = queries.unsqueeze(1).expand({opts_.num_queries, n, d});
  auto hs = decoder(tgt, memory).permute({1, 0, 2});  // (N, Q, D)
  PersonQueryOutput out;
  out.limbs = torch::sigmoid(limb_head->forward(hs));
  out.adjacency = torch::sigmoid(adjacency_head(hs))
                      .view({n, opts_.num_queries, opts_.num_limbs, opts_.num_limbs});
  return out;
}

PersonQueryOutput PersonQueryDecoderImpl::decode(const torch::Tensor& z2, const Skeleton& skeleton) {
  if (skeleton.num_limbs() != opts_.num_limbs) {
    throw ShapeError("PersonQuery heads built for " + std::to_string(opts_.num_limbs) +
                     " limbs, skeleton '" + skeleton.name + "' has " +
                     std::to_string(skeleton.num_limbs()));
  }
  return forward(z2);
}

torch::Tensor normalize_adjacency(const torch::Tensor& adj) {
  const auto l = adj.size(-1);
  auto eye = torch::eye(l, adj.options());
  auto a = torch::maximum(adj, eye);
  return a / a.sum(-1, true);
}

StgcnBlockImpl::StgcnBlockImpl(int in_dim, int out_dim, int temporal_kernel, bool last)
    : last_(last) {
  if (temporal_kernel < 1 || temporal_kernel % 2 == 0) {
    throw ConfigError("temporal kernel must be a positive odd number");
  }
  node_map = register_module("node_map", nn::Linear(in_dim, out_dim));
  time_conv = register_module(
      "time_conv",
      nn::Conv1d(nn::Conv1dOptions(out_dim, out_dim, temporal_kernel).padding(temporal_kernel / 2)));
}

torch::Tensor StgcnBlockImpl::spatial(const torch::Tensor& x, const torch::Tensor& adj) {
  return node_map(torch::matmul(normalize_adjacency(adj), x));
}

torch::Tensor StgcnBlockImpl::temporal(const torch::Tensor& x) {
  // (B, T, Q, L, C) -> (B*Q*L, C, T)
  const auto b = x.size(0), t = x.size(1), q = x.size(2), l = x.size(3), c = x.size(4);
  auto seq = x.permute({0, 2, 3, 4, 1}).reshape({b * q * l, c, t});
  seq = time_conv(seq);
  return seq.reshape({b, q, l, c, t}).permute({0, 4, 1, 2, 3});
}

torch::Tensor StgcnBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& adj) {
  auto h = torch::relu(spatial(x, adj));
  h = temporal(h);
  return last_ ? h : torch::relu(h);
}

StgcnImpl::StgcnImpl(const StgcnOptions& opts) : opts_(opts) {
  if (opts.blocks < 1) throw ConfigError("ST-GCN needs at least one block");
  if (opts.node_in != opts.node_out) throw ConfigError("ST-GCN residual needs node_in == node_out");
  blocks = register_module("blocks", nn::ModuleList());
  for (int i = 0; i < opts.blocks; ++i) {
    const int in = i == 0 ? opts.node_in : opts.hidden;
    const bool last = i == opts.blocks - 1;
    const int out = last ? opts.node_out : opts.hidden;
    blocks->push_back(StgcnBlock(in, out, opts.temporal_kernel, last));
  }
}

torch::Tensor StgcnImpl::forward(const torch::Tensor& limbs, const torch::Tensor& adjacency) {
  const bool batched = limbs.dim() == 4;
  auto l4 = batched ? limbs : limbs.unsqueeze(0);
  auto a5 = batched ? adjacency : adjacency.unsqueeze(0);
  if (l4.dim() != 4 || a5.dim() != 5) throw ShapeError("ST-GCN: unexpected input ranks");
  const auto b = l4.size(0), t = l4.size(1), q = l4.size(2);
  const int nl = opts_.num_limbs;
  if (t < 1) throw ArgumentError("ST-GCN needs at least one frame");
  if (l4.size(3) != 4 * nl || a5.size(3) != nl || a5.size(4) != nl || a5.size(1) != t ||
      a5.size(2) != q) {
    throw ShapeError("ST-GCN: limb/adjacency shapes do not match " + std::to_string(nl) + " limbs");
  }
  auto x = l4.reshape({b, t, q, nl, opts_.node_in});
  auto adj = (a5.detach() > opts_.adjacency_threshold).to(x.scalar_type());
  auto h = x;
  for (const auto& m : *blocks) h = m->as<StgcnBlock>()->forward(h, adj);
  auto out = (x + h).reshape({b, t, q, nl * opts_.node_out});
  return batched ? out : out.squeeze(0);
}

ResUpImpl::ResUpImpl(int in_channels, int out_channels) {
  up = register_module("up", nn::ConvTranspose2d(
                                 nn::ConvTranspose2dOptions(in_channels, out_channels, 2).stride(2)));
  bn1 = register_module("bn1", nn::BatchNorm2d(out_channels));
  conv = register_module("conv",
                         nn::Conv2d(nn::Conv2dOptions(out_channels, out_channels, 3).padding(1)));
  bn2 = register_module("bn2", nn::BatchNorm2d(out_channels));
  skip = register_module("skip", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 1)));
}

torch::Tensor ResUpImpl::forward(const torch::Tensor& x) {
  auto main = torch::relu(bn1(up(x)));
  main = bn2(conv(main));
  auto s = skip(F::interpolate(
      x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)));
  return torch::relu(main + s);
}

namespace {

nn::Sequential conv_bn_relu_x2(int channels) {
  nn::Sequential s;
  for (int i = 0; i < 2; ++i) {
    s->push_back(nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1)));
    s->push_back(nn::BatchNorm2d(channels));
    s->push_back(nn::ReLU());
  }
  return s;
}

}  // namespace

HeatmapDecoderImpl::HeatmapDecoderImpl(const HeatmapDecoderOptions& opts) : opts_(opts) {
  const auto [w5, w4, w3, w2] = opts.widths;
  if (opts.out_channels < 1 || opts.limbs_width < 1 || opts.stages < 0 || opts.convs_per_stage < 1 ||
      w5 < 1 || w4 < 1 || w3 < 1 || w2 < 1) {
    throw ConfigError("heatmap decoder widths must be positive");
  }
  up5 = register_module("up5", nn::Conv2d(nn::Conv2dOptions(opts.latent_channels, w5, 1)));
  up4 = register_module("up4", ResUp(w5, w4));
  dec4 = register_module("dec4", conv_bn_relu_x2(w4));
  up3 = register_module("up3", nn::ConvTranspose2d(nn::ConvTranspose2dOptions(w4, w3, 2).stride(2)));
  dec3 = register_module("dec3", conv_bn_relu_x2(w3));
  up2 = register_module("up2", nn::ConvTranspose2d(nn::ConvTranspose2dOptions(w3, w2, 2).stride(2)));
  dec2 = register_module("dec2", conv_bn_relu_x2(w2));
  up1 = register_module("up1", nn::ConvTranspose2d(nn::ConvTranspose2dOptions(w2, w2, 1).stride(1)));
  dec1 = register_module("dec1", conv_bn_relu_x2(w2));
  final_conv = register_module("final", nn::Conv2d(nn::Conv2dOptions(w2, opts.out_channels, 1)));

  limbs_entry = register_module("limbs_entry",
                                nn::Conv2d(nn::Conv2dOptions(w2, opts.limbs_width, 1)));
  limbs_stages = register_module("limbs_stages", nn::ModuleList());
  for (int s = 0; s < opts.stages; ++s) {
    nn::Sequential stage;
    for (int c = 0; c < opts.convs_per_stage; ++c) {
      stage->push_back(
          nn::Conv2d(nn::Conv2dOptions(opts.limbs_width, opts.limbs_width, 3).padding(1)));
      stage->push_back(nn::ReLU());
    }
    limbs_stages->push_back(stage);
  }
  limbs_head = register_module("limbs_head",
                               nn::Conv2d(nn::Conv2dOptions(opts.limbs_width, opts.out_channels, 1)));
}

torch::Tensor HeatmapDecoderImpl::forward(const torch::Tensor& z) { return forward_traced(z, nullptr); }

torch::Tensor HeatmapDecoderImpl::forward_traced(const torch::Tensor& z,
                                                 std::vector<TraceRow>* trace) {
  auto x = as_batch(z, opts_.latent_channels, opts_.latent_size, "heatmap decoder");
  auto record = [&](const char* stage, const torch::Tensor& t) {
    if (trace) trace->push_back({stage, {t.size(1), t.size(2), t.size(3)}});
  };
  x = up5(x);
  record("up5", x);
  x = up4(x);
  record("up4", x);
  x = dec4->forward(x);
  record("dec4", x);
  x = up3(x);
  record("up3", x);
  x = dec3->forward(x);
  record("dec3", x);
  x = up2(x);
  record("up2", x);
  x = dec2->forward(x);
  record("dec2", x);
  x = up1(x);
  record("up1", x);
  x = dec1->forward(x);
  record("dec1", x);
  auto base = final_conv(x);
  record("final", base);

  auto h = limbs_entry(x);
  for (const auto& stage : *limbs_stages) h = h + stage->as<nn::Sequential>()->forward(h);
  auto out = base + limbs_head(h);
  record("limbs", out);
  return out;
}

int64_t count_parameters(torch::nn::Module& module) {
  int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

}  // namespace vemd
