#include "vemd/losses.hpp"

#include <atomic>
#include <cmath>

#include <nlohmann/json.hpp>

#include "vemd/common.hpp"
#include "vemd/hungarian.hpp"

namespace vemd {

namespace {

std::atomic<std::int64_t> g_overflows{0};

double smooth_l1(double d) {
  const double a = std::abs(d);
  return a < 1.0 ? 0.5 * a * a : a - 0.5;
}

}  // namespace

void LossWeights::validate() const {
  for (double b : {beta_limb, beta_adj, beta_p1, beta_p2, beta_mmd}) {
    if (!std::isfinite(b) || b < 0.0) throw ConfigError("loss weights must be finite and nonnegative");
  }
}

nlohmann::json to_json(const LossWeights& w) {
  return {{"beta_limb", w.beta_limb}, {"beta_adj", w.beta_adj}, {"beta_p1", w.beta_p1},
          {"beta_p2", w.beta_p2}, {"beta_mmd", w.beta_mmd}};
}

LossWeights loss_weights_from_json(const nlohmann::json& j, const LossWeights& defaults) {
  LossWeights w = defaults;
  if (!j.is_object()) throw ConfigError("loss weights must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!value.is_number()) throw ConfigError("loss weight '" + key + "' must be a number");
    const double v = value.get<double>();
    if (key == "beta_limb") w.beta_limb = v;
    else if (key == "beta_adj") w.beta_adj = v;
    else if (key == "beta_p1") w.beta_p1 = v;
    else if (key == "beta_p2") w.beta_p2 = v;
    else if (key == "beta_p") w.beta_p1 = w.beta_p2 = v;
    else if (key == "beta_mmd") w.beta_mmd = v;
    else throw ConfigError("unknown loss weight '" + key + "'");
  }
  w.validate();
  return w;
}

double limb_match_cost(const torch::Tensor& pred_row, const PersonLimbs& person) {
  auto p = pred_row.detach().to(torch::kFloat64).contiguous().view({-1});
  if (p.size(0) != 4LL * person.num_limbs()) {
    throw ShapeError("limb prediction width " + std::to_string(p.size(0)) + " does not match " +
                     std::to_string(person.num_limbs()) + " limbs");
  }
  auto acc = p.accessor<double, 1>();
  double sum = 0.0;
  int n = 0;
  for (int k = 0; k < person.num_limbs(); ++k) {
    if (!person.valid_mask[k]) continue;
    for (int c = 0; c < 4; ++c) sum += smooth_l1(acc[4 * k + c] - person.limbs[k][c]);
    n += 4;
  }
  return n ? sum / n : 0.0;
}

MatchResult match_queries(const torch::Tensor& pred, std::span<const PersonLimbs> persons) {
  if (pred.dim() != 2 || pred.size(0) < 1) throw ShapeError("match_queries expects (Q, 4L) with Q >= 1");
  const int q = static_cast<int>(pred.size(0));
  const int n = static_cast<int>(persons.size());
  MatchResult r;
  r.query_to_person.assign(q, -1);
  r.person_to_query.assign(n, -1);
  if (n == 0) return r;
  std::vector<std::vector<double>> cost(q, std::vector<double>(n));
  for (int i = 0; i < q; ++i)
    for (int j = 0; j < n; ++j) cost[i][j] = limb_match_cost(pred[i], persons[j]);
  r.query_to_person = hungarian(cost);
  for (int i = 0; i < q; ++i) {
    if (r.query_to_person[i] >= 0) r.person_to_query[r.query_to_person[i]] = i;
  }
  r.cost = assignment_cost(cost, r.query_to_person);
  if (n > q) {
    r.overflow = true;
    g_overflows.fetch_add(1);
  }
  return r;
}

std::int64_t match_overflow_count() { return g_overflows.load(); }
void reset_match_overflow_count() { g_overflows.store(0); }

torch::Tensor limb_loss(const torch::Tensor& pred, std::span<const PersonLimbs> persons,
                        const MatchResult& match) {
  std::vector<int64_t> rows;
  std::vector<torch::Tensor> targets, masks;
  for (size_t i = 0; i < match.query_to_person.size(); ++i) {
    const int j = match.query_to_person[i];
    if (j < 0) continue;
    rows.push_back(static_cast<int64_t>(i));
    targets.push_back(persons[j].coords_tensor(torch::kFloat64).view({-1}));
    masks.push_back(persons[j].mask_tensor(torch::kFloat64).repeat_interleave(4));
  }
  if (rows.empty()) return (pred * 0).sum();
  auto idx = torch::tensor(rows, torch::kLong);
  auto p = pred.index_select(0, idx);
  auto t = torch::stack(targets).to(p.dtype());
  auto m = torch::stack(masks).to(p.dtype());
  const auto valid = m.sum();
  if (valid.item<double>() == 0.0) return (pred * 0).sum();
  auto l = torch::smooth_l1_loss(p, t, torch::Reduction::None);
  return (l * m).sum() / valid;
}

torch::Tensor adjacency_loss(const torch::Tensor& pred, const MatchResult& match,
                             const AdjacencyMatrix& target, double eps) {
  if (pred.dim() != 3 || pred.size(1) != target.size || pred.size(2) != target.size) {
    throw ShapeError("adjacency prediction " + c10::str(pred.sizes()) + " does not match a " +
                     std::to_string(target.size) + "x" + std::to_string(target.size) + " target");
  }
  std::vector<int64_t> rows;
  for (size_t i = 0; i < match.query_to_person.size(); ++i)
    if (match.query_to_person[i] >= 0) rows.push_back(static_cast<int64_t>(i));
  if (rows.empty()) return (pred * 0).sum();
  auto p = pred.index_select(0, torch::tensor(rows, torch::kLong)).clamp(eps, 1.0 - eps);
  auto y = target.to_tensor(torch::kFloat64).to(p.dtype()).unsqueeze(0).expand_as(p);
  return -(y * torch::log(p) + (1 - y) * torch::log(1 - p)).mean();
}

torch::Tensor heatmap_loss(const torch::Tensor& pred, const torch::Tensor& target) {
  if (!pred.sizes().equals(target.sizes())) {
    throw ShapeError("heatmap loss: prediction " + c10::str(pred.sizes()) + " vs target " +
                     c10::str(target.sizes()));
  }
  return torch::mse_loss(pred, target.to(pred.dtype()));
}

torch::Tensor classification_loss(const torch::Tensor& logits, const torch::Tensor& labels) {
  return torch::nn::functional::cross_entropy(logits, labels);
}

torch::Tensor personquery_sr_loss(const torch::Tensor& l_limb, const torch::Tensor& l_adj,
                                  const LossWeights& w) {
  return w.beta_limb * l_limb + w.beta_adj * l_adj;
}

torch::Tensor total_loss(LossBundle& b, const LossWeights& w) {
  if (!b.l_cls.defined()) throw ArgumentError("total_loss needs L_cls");
  auto check = [](const torch::Tensor& t, const char* name) {
    if (t.defined() && !std::isfinite(t.item<double>())) {
      throw TrainingAbort(name, std::string("non-finite loss component ") + name);
    }
  };
  check(b.l_cls, "L_cls");
  check(b.l_p1, "L_p1");
  check(b.l_p2, "L_p2");
  check(b.l_mmd, "L_mmd");
  auto total = b.l_cls;
  if (b.l_p1.defined()) total = total + w.beta_p1 * b.l_p1;
  if (b.l_p2.defined()) total = total + w.beta_p2 * b.l_p2;
  if (b.l_mmd.defined()) total = total + w.beta_mmd * b.l_mmd;
  b.total = total;
  return total;
}

double total_loss(double l_cls, double l_p1, double l_p2, double l_mmd, const LossWeights& w) {
  const std::pair<double, const char*> parts[] = {
      {l_cls, "L_cls"}, {l_p1, "L_p1"}, {l_p2, "L_p2"}, {l_mmd, "L_mmd"}};
  for (const auto& [v, name] : parts) {
    if (!std::isfinite(v)) throw TrainingAbort(name, std::string("non-finite loss component ") + name);
  }
  return l_cls + w.beta_p1 * l_p1 + w.beta_p2 * l_p2 + w.beta_mmd * l_mmd;
}

}  // namespace vemd
