#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "vemd/emotion_head.hpp"

namespace vemd {

struct AttentionResult {
  torch::Tensor output;   // (.., L_q, d_v)
  torch::Tensor weights;  // (.., L_q, L_k), rows sum to 1
};

// softmax(q k^T / sqrt(d)) v over the last two dims.
AttentionResult scaled_dot_attention(const torch::Tensor& q, const torch::Tensor& k,
                                     const torch::Tensor& v);

// Bidirectional cross-attention between an acoustic and a content sequence.
// Output is [A; C; Att(A,C,C); Att(C,A,A)] along the sequence axis.
class CrossAttentionImpl : public torch::nn::Module {
 public:
  CrossAttentionImpl(int dim, bool identity_projections = false);

  // a: (L_a, d) or (B, L_a, d); c likewise.
  torch::Tensor forward(const torch::Tensor& a, const torch::Tensor& c);

  torch::nn::Linear wq{nullptr}, wk{nullptr}, wv{nullptr};
  torch::Tensor last_weights_ac, last_weights_ca;

 private:
  int dim_;
};
TORCH_MODULE(CrossAttention);

struct AfgOutput {
  torch::Tensor fused;    // (.., D)
  torch::Tensor alpha_a;  // (..)
  torch::Tensor alpha_v;
  torch::Tensor h_a;
  torch::Tensor h_v;
};

// Attention-guided gate: project both embeddings to D, an MLP + softmax over
// [h_a; h_v] gives (alpha_a, alpha_v), output alpha_a h_a + alpha_v h_v.
class AfgGateImpl : public torch::nn::Module {
 public:
  AfgGateImpl(int dim_a, int dim_v, int shared_dim, int hidden = 64,
              bool identity_projections = false, bool zero_init_gate = false);

  AfgOutput forward(const torch::Tensor& f_a, const torch::Tensor& f_v,
                    std::optional<double> forced_alpha_a = std::nullopt);

  torch::nn::Linear proj_a{nullptr}, proj_v{nullptr};
  torch::nn::Sequential gate{nullptr};
};
TORCH_MODULE(AfgGate);

struct FusionBranch {
  std::string name;  // acoustic, content, text, video
  int input_dim = 0;
  bool frozen = false;
};

struct LateFusionOptions {
  std::vector<FusionBranch> branches;
  int proj_dim = 1024;
  int heads = 4;
  int num_classes = 3;
  // Acoustic and content merge into one audio branch through cross-attention.
  bool cross_attention = true;
  // Combine the audio and video pooled vectors with the AFG gate.
  bool use_afg = false;
  bool identity_afg_projections = false;
};

struct LateFusionOutput {
  torch::Tensor logits;
  std::map<std::string, torch::Tensor> pooled;  // per branch group, (B, D)
  torch::Tensor fused;                          // classifier input
  std::optional<AfgOutput> afg;
};

// Per-branch projection -> self-attention -> FAP, then concatenation (or AFG)
// and an MLP classifier.
class LateFusionImpl : public torch::nn::Module {
 public:
  explicit LateFusionImpl(const LateFusionOptions& opts);

  // sequences: name -> (B, L, d_name).
  LateFusionOutput forward(const std::map<std::string, torch::Tensor>& sequences,
                           std::optional<double> forced_alpha_a = std::nullopt);

  // Branch groups after merging acoustic + content ("audio").
  const std::vector<std::string>& groups() const { return groups_; }
  std::vector<torch::Tensor> group_parameters(const std::string& group);

 private:
  torch::Tensor branch(const std::string& group, const torch::Tensor& seq);

  LateFusionOptions opts_;
  std::vector<std::string> groups_;
  std::map<std::string, int> input_dims_;
  std::map<std::string, torch::nn::Linear> projections;
  std::map<std::string, torch::nn::MultiheadAttention> attention;
  std::map<std::string, FramesAttentionPool> pools;
  CrossAttention cross{nullptr};
  AfgGate afg{nullptr};
  torch::nn::Sequential classifier{nullptr};
};
TORCH_MODULE(LateFusion);

// Maps the CLI letters a,v,t onto feature modalities.
std::vector<std::string> parse_modalities(const std::string& letters);

}  // namespace vemd
