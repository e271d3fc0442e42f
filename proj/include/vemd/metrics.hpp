#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace vemd {

inline constexpr double kZ95 = 1.96;

struct WilsonInterval {
  double lo = 0.0;
  double hi = 1.0;
};

WilsonInterval wilson_interval(std::int64_t successes, std::int64_t n, double z = kZ95);

struct McNemarResult {
  std::int64_t b = 0;  // system A right, B wrong
  std::int64_t c = 0;  // system A wrong, B right
  double statistic = 0.0;  // (|b - c| - 1)^2 / (b + c), 0 when b + c = 0
  double p = 1.0;
  bool exact = true;  // exact binomial below 25 discordant pairs
};

McNemarResult mcnemar(std::span<const int> preds_a, std::span<const int> preds_b, std::span<const int> labels);

struct Prediction {
  std::string video_id;
  std::vector<double> logits;
  int pred = 0;
  int label = 0;
};

void write_predictions(std::span<const Prediction> preds, const std::filesystem::path& path);
std::vector<Prediction> read_predictions(const std::filesystem::path& path);

struct EvalReport {
  std::int64_t n = 0;
  std::int64_t correct = 0;
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  double uar = 0.0;  // mean recall over classes present in the labels
  std::vector<double> per_class_recall;
  WilsonInterval ci;
  std::vector<std::vector<std::int64_t>> confusion;  // [label][pred]
  std::vector<std::string> class_names;
};

EvalReport compute_report(std::span<const Prediction> preds, int num_classes,
                          std::vector<std::string> class_names = {});

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

}  // namespace vemd
