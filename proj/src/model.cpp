#include "vemd/model.hpp"

#include "vemd/common.hpp"
#include "vemd/skeleton.hpp"

namespace vemd {

VeMdImpl::VeMdImpl(const ExperimentConfig& cfg, int num_classes, std::vector<int> queries)
    : cfg_(cfg), num_classes_(num_classes), queries_(std::move(queries)) {
  cfg_.validate();
  skeletons_ = sr_skeletons(cfg_.decoder, cfg_.sr_modality);
  if (cfg_.decoder == DecoderKind::PersonQuery && queries_.size() != skeletons_.size()) {
    throw ConfigError("one query count per SR modality is required");
  }
  const auto& enc = cfg_.encoder;
  const auto& sc = cfg_.scale;

  torch::manual_seed(derive_seed(cfg_.seed, "encoder"));
  encoder = register_module("encoder", VariationalEncoder(enc));

  for (size_t i = 0; i < skeletons_.size(); ++i) {
    const auto& skel = SkeletonRegistry::builtin().get(skeletons_[i]);
    torch::manual_seed(derive_seed(cfg_.seed, "decoder:" + skel.name));
    if (cfg_.decoder == DecoderKind::Heatmap) {
      HeatmapDecoderOptions o;
      o.latent_channels = enc.latent_channels;
      o.latent_size = enc.latent_size;
      o.out_channels = skel.num_limbs();
      o.widths = sc.heatmap_widths;
      o.limbs_width = sc.heatmap_limbs_width;
      o.stages = sc.heatmap_stages;
      o.convs_per_stage = sc.heatmap_convs_per_stage;
      heatmap_decoders.push_back(register_module("heatmap_" + skel.name, HeatmapDecoder(o)));
    } else {
      PersonQueryOptions o;
      o.latent_channels = enc.latent_channels;
      o.latent_size = enc.latent_size;
      o.num_limbs = skel.num_limbs();
      o.num_queries = queries_[i];
      o.model_dim = sc.query_dim;
      o.heads = sc.query_heads;
      o.encoder_layers = sc.query_layers;
      o.decoder_layers = sc.query_layers;
      query_decoders.push_back(register_module("query_" + skel.name, PersonQueryDecoder(o)));
      if (cfg_.stgcn) {
        StgcnOptions g;
        g.num_limbs = skel.num_limbs();
        g.hidden = sc.stgcn_hidden;
        stgcns.push_back(register_module("stgcn_" + skel.name, Stgcn(g)));
      }
    }
  }

  torch::manual_seed(derive_seed(cfg_.seed, "emotion_head"));
  EmotionHeadOptions h;
  h.latent_channels = enc.latent_channels;
  h.latent_size = enc.latent_size;
  h.num_classes = num_classes;
  h.sr_mode = cfg_.sr_mode();
  h.projection_factor = cfg_.projection.factor;
  if (h.sr_mode != SrMode::None) h.sr_raw_dims = sr_raw_dims(cfg_, queries_);
  h.temporal_layers = sc.temporal_layers;
  h.temporal_heads = sc.temporal_heads;
  h.temporal_dim = sc.temporal_dim;
  h.detach_sr = cfg_.detach_sr;
  head = register_module("head", EmotionHead(h));
}

VeMdOutput VeMdImpl::forward(const torch::Tensor& frames) {
  if (frames.dim() != 5) throw ShapeError("VE-MD expects (B, T, 3, H, W) frames, got " + c10::str(frames.sizes()));
  const auto b = frames.size(0), t = frames.size(1);
  VeMdOutput out;
  out.latent = encoder(frames.flatten(0, 1));
  const auto& z2 = out.latent.z2;
  const bool feed = cfg_.sr_mode() != SrMode::None;
  for (auto& dec : heatmap_decoders) {
    auto maps = dec(z2);
    out.heatmaps.push_back(maps);
    if (feed) out.sr_inputs.push_back(maps.mean(1).flatten(1));
  }
  for (size_t i = 0; i < query_decoders.size(); ++i) {
    auto pq = query_decoders[i](z2);
    out.person_query.push_back(pq);
    torch::Tensor sr = pq.limbs;
    if (!stgcns.empty()) {
      const auto q = pq.limbs.size(1), l = pq.adjacency.size(2);
      auto refined = stgcns[i](pq.limbs.view({b, t, q, 4 * l}), pq.adjacency.view({b, t, q, l, l}));
      out.refined.push_back(refined);
      sr = refined.reshape({b * t, -1});
    }
    if (feed) out.sr_inputs.push_back(sr.flatten(1));
  }
  out.emotion = head(out.latent.z1, out.latent.z2, out.sr_inputs, t);
  return out;
}

std::string model_hash(torch::nn::Module& module) {
  std::uint64_t h = fnv1a64(std::string_view{});
  auto mix = [&h](const std::string& name, const torch::Tensor& t) {
    h = fnv1a64(name, h);
    auto c = t.detach().contiguous();
    const auto* p = reinterpret_cast<const std::byte*>(c.data_ptr());
    h = fnv1a64(std::span<const std::byte>(p, c.numel() * c.element_size()), h);
  };
  for (const auto& item : module.named_parameters()) mix(item.key(), item.value());
  for (const auto& item : module.named_buffers()) mix(item.key(), item.value());
  return to_hex(h);
}

}  // namespace vemd
