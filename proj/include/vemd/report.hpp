#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vemd/metrics.hpp"

namespace vemd {

struct Series {
  std::string name;
  std::vector<double> values;
};

// Binary PPM line chart, one colour per series, shared y range.
void write_line_plot(const std::vector<Series>& series, const std::filesystem::path& path, int width = 640,
                     int height = 400);

// Binary PGM heat map of a confusion matrix (row-normalized, dark = high).
void write_confusion_image(const std::vector<std::vector<std::int64_t>>& confusion,
                           const std::filesystem::path& path, int cell = 48);

struct ReportInputs {
  std::filesystem::path run_dir;        // trace.csv, eval.json, ablation.csv when present
  std::filesystem::path predictions_a;  // optional McNemar comparison
  std::filesystem::path predictions_b;
};

// Writes report.md plus loss_curves.ppm / confusion.pgm into out_dir.
// Returns the files written. Throws IoError when the run dir has nothing to report.
std::vector<std::filesystem::path> write_report(const ReportInputs& in, const std::filesystem::path& out_dir);

}  // namespace vemd
