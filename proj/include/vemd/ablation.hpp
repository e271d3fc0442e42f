#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vemd/config.hpp"

namespace vemd {

struct AblationAxis {
  std::string key;  // top-level config key, or "a.b" for nested ones
  std::vector<nlohmann::json> values;
};

// A base config plus axes expanded as a Cartesian product (last axis varies
// fastest), followed by any explicitly listed runs.
struct AblationGrid {
  nlohmann::json base = nlohmann::json::object();
  std::vector<AblationAxis> axes;
  std::vector<nlohmann::json> runs;
};

AblationGrid grid_from_json(const nlohmann::json& j);
AblationGrid load_grid(const std::filesystem::path& path);

// Expanded configs, validated. Runs without a name get one built from their axis values.
std::vector<ExperimentConfig> expand_grid(const AblationGrid& grid);

struct AblationRow {
  std::string hash;
  std::string name;
  std::string decoder;
  bool sr_to_decoder = false;
  std::string modality;
  std::string projection;
  std::string queries;
  bool stgcn = false;
  long long emb_size = -1;  // -1 when not resolvable without data
  std::string status;       // done, planned, failed: ...
  double train_accuracy = 0.0;
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  double uar = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

nlohmann::json to_json(const AblationRow& r);
AblationRow ablation_row_from_json(const nlohmann::json& j);

struct AblationOptions {
  std::filesystem::path out_dir;     // runs/<hash>/ per config plus the tables
  bool plan_only = false;            // no training; Emb_size and config columns only
  std::filesystem::path eval_manifest;  // empty = report training-set metrics
  // Dataset maxima for resolving Q_Max when planning without data.
  int max_bodies = 0;
  int max_faces = 0;
  std::ostream* log = nullptr;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  int duplicates = 0;
  int resumed = 0;
};

AblationResult run_ablation(const std::vector<ExperimentConfig>& configs, const AblationOptions& opts);

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path);
void write_ablation_markdown(const std::vector<AblationRow>& rows, const std::filesystem::path& path);

}  // namespace vemd
