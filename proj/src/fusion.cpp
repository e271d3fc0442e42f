#include "vemd/fusion.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "vemd/common.hpp"
#include "vemd/feature_io.hpp"

namespace vemd {

namespace nn = torch::nn;

AttentionResult scaled_dot_attention(const torch::Tensor& q, const torch::Tensor& k,
                                     const torch::Tensor& v) {
  if (q.size(-1) != k.size(-1)) {
    throw ShapeError("attention: query width " + std::to_string(q.size(-1)) + " vs key width " +
                     std::to_string(k.size(-1)));
  }
  if (k.size(-2) != v.size(-2)) throw ShapeError("attention: key and value lengths differ");
  auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(q.size(-1)));
  AttentionResult r;
  r.weights = torch::softmax(scores, -1);
  r.output = torch::matmul(r.weights, v);
  return r;
}

CrossAttentionImpl::CrossAttentionImpl(int dim, bool identity_projections) : dim_(dim) {
  wq = register_module("wq", nn::Linear(dim, dim));
  wk = register_module("wk", nn::Linear(dim, dim));
  wv = register_module("wv", nn::Linear(dim, dim));
  if (identity_projections) {
    torch::NoGradGuard g;
    for (auto* l : {&wq, &wk, &wv}) {
      (*l)->weight.copy_(torch::eye(dim));
      (*l)->bias.zero_();
    }
  }
}

torch::Tensor CrossAttentionImpl::forward(const torch::Tensor& a, const torch::Tensor& c) {
  if (a.size(-1) != dim_ || c.size(-1) != dim_) {
    throw ShapeError("cross-attention expects width " + std::to_string(dim_) + ", got " +
                     std::to_string(a.size(-1)) + " and " + std::to_string(c.size(-1)));
  }
  if (a.dim() != c.dim()) throw ShapeError("cross-attention inputs differ in rank");
  auto ac = scaled_dot_attention(wq(a), wk(c), wv(c));
  auto ca = scaled_dot_attention(wq(c), wk(a), wv(a));
  last_weights_ac = ac.weights;
  last_weights_ca = ca.weights;
  return torch::cat({a, c, ac.output, ca.output}, -2);
}

AfgGateImpl::AfgGateImpl(int dim_a, int dim_v, int shared_dim, int hidden, bool identity_projections,
                         bool zero_init_gate) {
  proj_a = register_module("proj_a", nn::Linear(dim_a, shared_dim));
  proj_v = register_module("proj_v", nn::Linear(dim_v, shared_dim));
  if (identity_projections) {
    if (dim_a != shared_dim || dim_v != shared_dim) {
      throw ConfigError("identity AFG projections need matching widths");
    }
    torch::NoGradGuard g;
    for (auto* l : {&proj_a, &proj_v}) {
      (*l)->weight.copy_(torch::eye(shared_dim));
      (*l)->bias.zero_();
    }
  }
  auto out = nn::Linear(hidden, 2);
  if (zero_init_gate) {
    torch::NoGradGuard g;
    out->weight.zero_();
    out->bias.zero_();
  }
  gate = register_module("gate", nn::Sequential(nn::Linear(2 * shared_dim, hidden), nn::ReLU(), out));
}

AfgOutput AfgGateImpl::forward(const torch::Tensor& f_a, const torch::Tensor& f_v,
                               std::optional<double> forced_alpha_a) {
  AfgOutput o;
  o.h_a = proj_a(f_a);
  o.h_v = proj_v(f_v);
  if (forced_alpha_a) {
    const double a = *forced_alpha_a;
    if (!(a >= 0.0 && a <= 1.0)) throw ArgumentError("forced alpha must lie in [0,1]");
    auto shape = o.h_a.sizes().vec();
    shape.pop_back();
    o.alpha_a = torch::full(shape, a, o.h_a.options());
    o.alpha_v = torch::full(shape, 1.0 - a, o.h_a.options());
  } else {
    auto w = torch::softmax(gate->forward(torch::cat({o.h_a, o.h_v}, -1)), -1);
    o.alpha_a = w.select(-1, 0);
    o.alpha_v = w.select(-1, 1);
  }
  o.fused = o.alpha_a.unsqueeze(-1) * o.h_a + o.alpha_v.unsqueeze(-1) * o.h_v;
  return o;
}

LateFusionImpl::LateFusionImpl(const LateFusionOptions& opts) : opts_(opts) {
  std::set<std::string> names;
  for (const auto& b : opts.branches) {
    if (b.input_dim < 1) throw ConfigError("fusion branch '" + b.name + "' has no input width");
    if (!names.insert(b.name).second) throw ConfigError("duplicate fusion branch '" + b.name + "'");
    input_dims_[b.name] = b.input_dim;
  }
  const bool merge_audio = opts.cross_attention && names.count(kAcoustic) && names.count(kContent);
  for (const auto& b : opts.branches) {
    if (merge_audio && (b.name == kAcoustic || b.name == kContent)) {
      if (std::find(groups_.begin(), groups_.end(), "audio") == groups_.end()) groups_.push_back("audio");
    } else {
      groups_.push_back(b.name);
    }
  }
  if (groups_.size() < 2) {
    throw ConfigError("late fusion needs at least two modalities; train a single modality with the unimodal path");
  }
  for (const auto& b : opts.branches) {
    projections.emplace(b.name, register_module("proj_" + b.name, nn::Linear(b.input_dim, opts.proj_dim)));
  }
  const int heads = compatible_heads(opts.proj_dim, opts.heads);
  for (const auto& g : groups_) {
    attention.emplace(
        g, register_module("attn_" + g, nn::MultiheadAttention(nn::MultiheadAttentionOptions(opts.proj_dim, heads))));
    pools.emplace(g, register_module("fap_" + g, FramesAttentionPool(opts.proj_dim)));
  }
  if (merge_audio) cross = register_module("cross", CrossAttention(opts.proj_dim));

  int64_t fused_dim = static_cast<int64_t>(groups_.size()) * opts.proj_dim;
  if (opts.use_afg) {
    const bool has_audio = std::count(groups_.begin(), groups_.end(), "audio") ||
                           std::count(groups_.begin(), groups_.end(), kAcoustic);
    const bool has_video = std::count(groups_.begin(), groups_.end(), kVideo);
    if (!has_audio || !has_video) throw ConfigError("AFG needs an audio and a video branch");
    afg = register_module("afg", AfgGate(opts.proj_dim, opts.proj_dim, opts.proj_dim, 64,
                                         opts.identity_afg_projections, true));
    fused_dim -= opts.proj_dim;
  }
  classifier = register_module(
      "classifier", nn::Sequential(nn::Linear(fused_dim, std::max<int64_t>(1, opts.proj_dim / 2)), nn::ReLU(),
                                   nn::Linear(std::max<int64_t>(1, opts.proj_dim / 2), opts.num_classes)));

  for (const auto& b : opts.branches) {
    if (!b.frozen) continue;
    const std::string g = merge_audio && (b.name == kAcoustic || b.name == kContent) ? "audio" : b.name;
    for (auto& p : group_parameters(g)) p.set_requires_grad(false);
  }
}

std::vector<torch::Tensor> LateFusionImpl::group_parameters(const std::string& group) {
  std::vector<torch::Tensor> out;
  auto add = [&](nn::Module& m) {
    for (auto& p : m.parameters()) out.push_back(p);
  };
  if (group == "audio") {
    add(*projections.at(kAcoustic));
    add(*projections.at(kContent));
    add(*cross);
  } else {
    add(*projections.at(group));
  }
  add(*attention.at(group));
  add(*pools.at(group));
  return out;
}

torch::Tensor LateFusionImpl::branch(const std::string& group, const torch::Tensor& seq) {
  auto x = seq.transpose(0, 1);  // (L, B, D)
  auto [out, w] = attention.at(group)->forward(x, x, x);
  (void)w;
  return pools.at(group)->forward(out.transpose(0, 1));
}

LateFusionOutput LateFusionImpl::forward(const std::map<std::string, torch::Tensor>& sequences,
                                         std::optional<double> forced_alpha_a) {
  auto project = [&](const std::string& name) {
    auto it = sequences.find(name);
    if (it == sequences.end()) throw ArgumentError("missing fusion input '" + name + "'");
    auto s = it->second;
    if (s.dim() == 2) s = s.unsqueeze(0);
    if (s.dim() != 3 || s.size(2) != input_dims_.at(name)) {
      throw ShapeError("fusion input '" + name + "' has shape " + c10::str(s.sizes()) + ", expected width " +
                       std::to_string(input_dims_.at(name)));
    }
    return projections.at(name)->forward(s);
  };
  LateFusionOutput o;
  for (const auto& g : groups_) {
    torch::Tensor seq = g == "audio" ? cross(project(kAcoustic), project(kContent)) : project(g);
    o.pooled[g] = branch(g, seq);
  }
  std::vector<torch::Tensor> parts;
  if (afg) {
    const std::string audio = o.pooled.count("audio") ? "audio" : kAcoustic;
    o.afg = afg(o.pooled.at(audio), o.pooled.at(kVideo), forced_alpha_a);
    parts.push_back(o.afg->fused);
    for (const auto& g : groups_)
      if (g != audio && g != kVideo) parts.push_back(o.pooled.at(g));
  } else {
    for (const auto& g : groups_) parts.push_back(o.pooled.at(g));
  }
  o.fused = torch::cat(parts, -1);
  o.logits = classifier->forward(o.fused);
  return o;
}

std::vector<std::string> parse_modalities(const std::string& letters) {
  std::vector<std::string> out;
  std::stringstream ss(letters);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "a") {
      out.push_back(kAcoustic);
      out.push_back(kContent);
    } else if (tok == "v") {
      out.push_back(kVideo);
    } else if (tok == "t") {
      out.push_back(kText);
    } else if (!tok.empty()) {
      throw ArgumentError("unknown modality '" + tok + "' (expected a, v or t)");
    }
  }
  if (out.empty()) throw ArgumentError("no modalities given");
  return out;
}

}  // namespace vemd
