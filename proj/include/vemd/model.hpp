#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

#include "vemd/config.hpp"
#include "vemd/emotion_head.hpp"
#include "vemd/encoder.hpp"
#include "vemd/sr_decoders.hpp"

namespace vemd {

struct VeMdOutput {
  LatentPair latent;                            // (B*T, C_z, h, w)
  std::vector<torch::Tensor> heatmaps;          // per SR modality (B*T, C, H_S, W_S)
  std::vector<PersonQueryOutput> person_query;  // per SR modality, leading dim B*T
  std::vector<torch::Tensor> refined;           // ST-GCN output per modality (B, T, Q, 4L)
  std::vector<torch::Tensor> sr_inputs;         // flattened SR fed to the emotion head
  EmotionOutput emotion;
};

// Encoder, one structural decoder per SR modality, and the emotion head.
class VeMdImpl : public torch::nn::Module {
 public:
  // queries: resolved query count per SR modality (PersonQuery only).
  VeMdImpl(const ExperimentConfig& cfg, int num_classes, std::vector<int> queries = {});

  // frames: (B, T, 3, H, W).
  VeMdOutput forward(const torch::Tensor& frames);

  const ExperimentConfig& config() const { return cfg_; }
  const std::vector<std::string>& skeletons() const { return skeletons_; }
  const std::vector<int>& queries() const { return queries_; }
  int num_classes() const { return num_classes_; }

  VariationalEncoder encoder{nullptr};
  std::vector<HeatmapDecoder> heatmap_decoders;
  std::vector<PersonQueryDecoder> query_decoders;
  std::vector<Stgcn> stgcns;
  EmotionHead head{nullptr};

 private:
  ExperimentConfig cfg_;
  int num_classes_;
  std::vector<int> queries_;
  std::vector<std::string> skeletons_;
};
TORCH_MODULE(VeMd);

// Content hash over every parameter and buffer (names and bytes).
std::string model_hash(torch::nn::Module& module);

}  // namespace vemd
