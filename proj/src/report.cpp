#include "vemd/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vemd/common.hpp"
#include "vemd/trainer.hpp"

namespace vemd {

namespace fs = std::filesystem;

namespace {

struct Image {
  int w, h;
  std::vector<std::uint8_t> rgb;
  Image(int w_, int h_) : w(w_), h(h_), rgb(static_cast<size_t>(w_) * h_ * 3, 255) {}
  void set(int x, int y, std::array<std::uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    auto* p = &rgb[(static_cast<size_t>(y) * w + x) * 3];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }
  void line(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      set(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }
};

constexpr std::array<std::array<std::uint8_t, 3>, 5> kColours{{
    {31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40}, {148, 103, 189}}};

}  // namespace

void write_line_plot(const std::vector<Series>& series, const fs::path& path, int width, int height) {
  if (width < 32 || height < 32) throw ArgumentError("plot too small");
  Image img(width, height);
  const int left = 40, right = width - 10, top = 10, bottom = height - 30;
  img.line(left, bottom, right, bottom, {0, 0, 0});
  img.line(left, top, left, bottom, {0, 0, 0});
  double lo = INFINITY, hi = -INFINITY;
  size_t n = 0;
  for (const auto& s : series) {
    for (double v : s.values) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    n = std::max(n, s.values.size());
  }
  if (n >= 2 && std::isfinite(lo)) {
    if (hi - lo < 1e-12) hi = lo + 1.0;
    auto px = [&](size_t i) { return left + static_cast<int>(std::lround((right - left) * double(i) / (n - 1))); };
    auto py = [&](double v) { return bottom - static_cast<int>(std::lround((bottom - top) * (v - lo) / (hi - lo))); };
    for (size_t k = 0; k < series.size(); ++k) {
      const auto& v = series[k].values;
      const auto c = kColours[k % kColours.size()];
      for (size_t i = 1; i < v.size(); ++i) {
        if (std::isfinite(v[i - 1]) && std::isfinite(v[i])) img.line(px(i - 1), py(v[i - 1]), px(i), py(v[i]), c);
      }
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
}

void write_confusion_image(const std::vector<std::vector<std::int64_t>>& confusion, const fs::path& path, int cell) {
  const int k = static_cast<int>(confusion.size());
  if (k == 0 || cell < 1) throw ArgumentError("empty confusion matrix");
  const int side = k * cell;
  std::vector<std::uint8_t> px(static_cast<size_t>(side) * side, 255);
  for (int r = 0; r < k; ++r) {
    std::int64_t total = 0;
    for (auto v : confusion[r]) total += v;
    for (int c = 0; c < k; ++c) {
      const double f = total ? double(confusion[r][c]) / total : 0.0;
      const auto g = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - f)));
      for (int y = r * cell; y < (r + 1) * cell; ++y)
        for (int x = c * cell; x < (c + 1) * cell; ++x) {
          const bool border = y == r * cell || x == c * cell;
          px[static_cast<size_t>(y) * side + x] = border ? 128 : g;
        }
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << side << ' ' << side << "\n255\n";
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

std::vector<fs::path> write_report(const ReportInputs& in, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  std::ostringstream md;
  md << "# Run report\n\n";
  bool any = false;

  const auto trace_path = in.run_dir / "trace.csv";
  if (fs::exists(trace_path)) {
    any = true;
    const auto rows = read_trace(trace_path);
    std::vector<Series> s{{"L_cls", {}}, {"L_p1", {}}, {"L_p2", {}}, {"L_mmd", {}}, {"total", {}}};
    for (const auto& r : rows) {
      s[0].values.push_back(r.l_cls);
      s[1].values.push_back(r.l_p1);
      s[2].values.push_back(r.l_p2);
      s[3].values.push_back(r.l_mmd);
      s[4].values.push_back(r.total);
    }
    const auto img = out_dir / "loss_curves.ppm";
    write_line_plot(s, img);
    written.push_back(img);
    md << "## Training\n\n" << rows.size() << " steps.";
    if (!rows.empty()) {
      const auto& l = rows.back();
      md << " Final step: L_cls " << l.l_cls << ", L_p1 " << l.l_p1 << ", L_p2 " << l.l_p2 << ", L_mmd " << l.l_mmd
         << ", total " << l.total << ".";
    }
    md << "\n\nLoss curves (blue L_cls, orange L_p1, green L_p2, red L_mmd, purple total): loss_curves.ppm\n\n";
  }

  const auto eval_path = in.run_dir / "eval.json";
  if (fs::exists(eval_path)) {
    any = true;
    std::ifstream f(eval_path);
    const auto r = eval_report_from_json(nlohmann::json::parse(f));
    const auto img = out_dir / "confusion.pgm";
    write_confusion_image(r.confusion, img);
    written.push_back(img);
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "## Evaluation\n\nn = %lld, accuracy %.4f (95%% CI [%.4f, %.4f]), weighted F1 %.4f, UAR %.4f\n\n",
                  static_cast<long long>(r.n), r.accuracy, r.ci.lo, r.ci.hi, r.weighted_f1, r.uar);
    md << buf << "Confusion matrix (rows = label): confusion.pgm\n\n";
    for (size_t i = 0; i < r.confusion.size(); ++i) {
      md << "- " << (i < r.class_names.size() ? r.class_names[i] : std::to_string(i)) << ":";
      for (auto v : r.confusion[i]) md << ' ' << v;
      md << '\n';
    }
    md << '\n';
  }

  const auto abl = in.run_dir / "ablation.md";
  if (fs::exists(abl)) {
    any = true;
    std::ifstream f(abl);
    md << "## Ablation\n\n" << f.rdbuf() << '\n';
  }

  if (!in.predictions_a.empty() || !in.predictions_b.empty()) {
    if (in.predictions_a.empty() || in.predictions_b.empty()) throw ArgumentError("McNemar needs two prediction files");
    any = true;
    const auto a = read_predictions(in.predictions_a);
    const auto b = read_predictions(in.predictions_b);
    if (a.size() != b.size()) throw ArgumentError("prediction files differ in length");
    std::vector<int> pa, pb, labels;
    for (size_t i = 0; i < a.size(); ++i) {
      if (a[i].video_id != b[i].video_id || a[i].label != b[i].label) {
        throw ArgumentError("prediction files are not aligned at " + a[i].video_id);
      }
      pa.push_back(a[i].pred);
      pb.push_back(b[i].pred);
      labels.push_back(a[i].label);
    }
    const auto m = mcnemar(pa, pb, labels);
    char buf[256];
    std::snprintf(buf, sizeof buf, "## McNemar\n\nb = %lld, c = %lld, statistic %.6f, p = %.6g (%s)%s\n\n",
                  static_cast<long long>(m.b), static_cast<long long>(m.c), m.statistic, m.p,
                  m.exact ? "exact binomial" : "chi-square, continuity corrected",
                  m.p < 0.05 ? ", significant at 0.05" : "");
    md << buf;
  }

  if (!any) throw IoError("nothing to report in " + in.run_dir.string());
  const auto md_path = out_dir / "report.md";
  std::ofstream(md_path) << md.str();
  written.push_back(md_path);
  return written;
}

}  // namespace vemd
