#include "vemd/metrics.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "vemd/common.hpp"

namespace vemd {

using json = nlohmann::json;

WilsonInterval wilson_interval(std::int64_t successes, std::int64_t n, double z) {
  if (n <= 0) throw ArgumentError("Wilson interval needs n >= 1");
  if (successes < 0 || successes > n) throw ArgumentError("successes must lie in [0, n]");
  const double nn = static_cast<double>(n);
  const double p = successes / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double centre = (p + z2 / (2 * nn)) / denom;
  const double half = z * std::sqrt(p * (1 - p) / nn + z2 / (4 * nn * nn)) / denom;
  WilsonInterval ci{std::max(0.0, centre - half), std::min(1.0, centre + half)};
  if (successes == n) ci.hi = 1.0;
  if (successes == 0) ci.lo = 0.0;
  return ci;
}

McNemarResult mcnemar(std::span<const int> a, std::span<const int> b, std::span<const int> labels) {
  if (a.size() != b.size() || a.size() != labels.size()) {
    throw ArgumentError("mcnemar: prediction and label vectors differ in length");
  }
  McNemarResult r;
  for (size_t i = 0; i < labels.size(); ++i) {
    const bool ra = a[i] == labels[i], rb = b[i] == labels[i];
    if (ra && !rb) ++r.b;
    if (!ra && rb) ++r.c;
  }
  const std::int64_t n = r.b + r.c;
  if (n == 0) return r;
  const double d = std::abs(static_cast<double>(r.b - r.c)) - 1.0;
  r.statistic = d * d / n;
  if (n < 25) {
    r.exact = true;
    const std::int64_t k = std::min(r.b, r.c);
    // Sum of C(n, i) / 2^n in log space.
    double tail = 0.0;
    for (std::int64_t i = 0; i <= k; ++i) {
      tail += std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) - n * std::log(2.0));
    }
    r.p = std::min(1.0, 2.0 * tail);
  } else {
    r.exact = false;
    r.p = std::erfc(std::sqrt(r.statistic / 2.0));
  }
  return r;
}

void write_predictions(std::span<const Prediction> preds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& p : preds) {
    out << json{{"video_id", p.video_id}, {"logits", p.logits}, {"pred", p.pred}, {"label", p.label}}.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<Prediction> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      out.push_back({j.at("video_id").get<std::string>(), j.at("logits").get<std::vector<double>>(),
                     j.at("pred").get<int>(), j.at("label").get<int>()});
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

EvalReport compute_report(std::span<const Prediction> preds, int num_classes, std::vector<std::string> class_names) {
  if (preds.empty()) throw ArgumentError("cannot evaluate an empty split");
  if (num_classes < 1) throw ArgumentError("num_classes must be >= 1");
  EvalReport r;
  r.class_names = std::move(class_names);
  r.n = static_cast<std::int64_t>(preds.size());
  r.confusion.assign(num_classes, std::vector<std::int64_t>(num_classes, 0));
  for (const auto& p : preds) {
    if (p.label < 0 || p.label >= num_classes || p.pred < 0 || p.pred >= num_classes) {
      throw ArgumentError("prediction for " + p.video_id + " has an out-of-range class");
    }
    ++r.confusion[p.label][p.pred];
    if (p.label == p.pred) ++r.correct;
  }
  r.accuracy = static_cast<double>(r.correct) / r.n;
  r.ci = wilson_interval(r.correct, r.n);
  r.per_class_recall.assign(num_classes, 0.0);
  int present = 0;
  double recall_sum = 0.0;
  for (int k = 0; k < num_classes; ++k) {
    std::int64_t support = 0, predicted = 0;
    for (int j = 0; j < num_classes; ++j) {
      support += r.confusion[k][j];
      predicted += r.confusion[j][k];
    }
    const double tp = static_cast<double>(r.confusion[k][k]);
    const double recall = support ? tp / support : 0.0;
    const double precision = predicted ? tp / predicted : 0.0;
    r.per_class_recall[k] = recall;
    if (support) {
      ++present;
      recall_sum += recall;
      const double f1 = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
      r.weighted_f1 += f1 * support / r.n;
    }
  }
  r.uar = present ? recall_sum / present : 0.0;
  return r;
}

json to_json(const EvalReport& r) {
  return {{"n", r.n},
          {"correct", r.correct},
          {"accuracy", r.accuracy},
          {"weighted_f1", r.weighted_f1},
          {"uar", r.uar},
          {"per_class_recall", r.per_class_recall},
          {"wilson_ci", {r.ci.lo, r.ci.hi}},
          {"confusion", r.confusion},
          {"class_names", r.class_names}};
}

EvalReport eval_report_from_json(const json& j) {
  EvalReport r;
  try {
    r.n = j.at("n").get<std::int64_t>();
    r.correct = j.at("correct").get<std::int64_t>();
    r.accuracy = j.at("accuracy").get<double>();
    r.weighted_f1 = j.at("weighted_f1").get<double>();
    r.uar = j.at("uar").get<double>();
    r.per_class_recall = j.at("per_class_recall").get<std::vector<double>>();
    r.ci = {j.at("wilson_ci").at(0).get<double>(), j.at("wilson_ci").at(1).get<double>()};
    r.confusion = j.at("confusion").get<std::vector<std::vector<std::int64_t>>>();
    r.class_names = j.value("class_names", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw FormatError(std::string("eval report: ") + e.what());
  }
  return r;
}

}  // namespace vemd
