#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>
#include <torch/torch.h>

#include "vemd/annotations.hpp"

namespace vemd {

struct LossWeights {
  double beta_limb = 1.0;
  double beta_adj = 0.5;
  double beta_p1 = 0.1;
  double beta_p2 = 0.1;
  double beta_mmd = 0.1;

  static LossWeights personquery_defaults() { return {1.0, 0.5, 0.1, 0.1, 0.1}; }
  static LossWeights heatmap_defaults() { return {1.0, 0.5, 1.0, 1.0, 0.1}; }
  static LossWeights zero() { return {0.0, 0.0, 0.0, 0.0, 0.0}; }

  void validate() const;  // all finite and >= 0
  bool operator==(const LossWeights&) const = default;
};

nlohmann::json to_json(const LossWeights& w);
LossWeights loss_weights_from_json(const nlohmann::json& j, const LossWeights& defaults);

struct MatchResult {
  std::vector<int> query_to_person;  // -1 = unmatched
  std::vector<int> person_to_query;  // -1 = left out (persons > Q)
  double cost = 0.0;
  bool overflow = false;  // more persons than queries
};

// Mean smooth-L1 over the valid coordinates of one person; 0 when none are valid.
double limb_match_cost(const torch::Tensor& pred_row, const PersonLimbs& person);

// One-to-one Hungarian assignment of queries to persons on the masked
// smooth-L1 limb cost. pred: (Q, 4 * num_limbs).
MatchResult match_queries(const torch::Tensor& pred, std::span<const PersonLimbs> persons);

// Process-wide count of matches where persons outnumbered queries.
std::int64_t match_overflow_count();
void reset_match_overflow_count();

// Smooth-L1 over valid coordinates of matched pairs, averaged over the valid
// entries; zero when nothing is matched.
torch::Tensor limb_loss(const torch::Tensor& pred, std::span<const PersonLimbs> persons,
                        const MatchResult& match);

// Mean BCE between matched queries' adjacency (Q, L, L) and the target.
torch::Tensor adjacency_loss(const torch::Tensor& pred, const MatchResult& match,
                             const AdjacencyMatrix& target, double eps = 1e-7);

torch::Tensor heatmap_loss(const torch::Tensor& pred, const torch::Tensor& target);

torch::Tensor classification_loss(const torch::Tensor& logits, const torch::Tensor& labels);

// beta_limb * L_limb + beta_adj * L_adj
torch::Tensor personquery_sr_loss(const torch::Tensor& l_limb, const torch::Tensor& l_adj,
                                  const LossWeights& w);

struct LossBundle {
  torch::Tensor l_cls;
  torch::Tensor l_p1;
  torch::Tensor l_p2;
  torch::Tensor l_mmd;
  std::vector<torch::Tensor> l_limb;  // per SR modality (PersonQuery only)
  std::vector<torch::Tensor> l_adj;
  torch::Tensor total;
};

// L_cls + beta_p1 L_p1 + beta_p2 L_p2 + beta_mmd L_mmd. Undefined components
// count as zero. Throws TrainingAbort naming the first non-finite component.
torch::Tensor total_loss(LossBundle& bundle, const LossWeights& w);
double total_loss(double l_cls, double l_p1, double l_p2, double l_mmd, const LossWeights& w);

}  // namespace vemd
