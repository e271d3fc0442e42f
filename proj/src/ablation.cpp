#include "vemd/ablation.hpp"

#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <utility>

#include "vemd/annotations.hpp"
#include "vemd/common.hpp"
#include "vemd/dataset.hpp"
#include "vemd/trainer.hpp"

namespace vemd {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

json& at_path(json& j, const std::string& dotted) {
  json* cur = &j;
  size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const auto part = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("bad grid key '" + dotted + "'");
    if (!cur->is_object()) *cur = json::object();
    cur = &(*cur)[part];
    if (dot == std::string::npos) return *cur;
    start = dot + 1;
  }
}

std::string value_label(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

}  // namespace

AblationGrid grid_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("grid must be an object");
  AblationGrid g;
  for (const auto& [k, v] : j.items()) {
    if (k != "base" && k != "axes" && k != "runs") throw ConfigError("unknown grid key '" + k + "'");
  }
  if (j.contains("base")) {
    if (!j.at("base").is_object()) throw ConfigError("grid base must be an object");
    g.base = j.at("base");
  }
  if (j.contains("axes")) {
    const auto& axes = j.at("axes");
    auto add = [&](const std::string& key, const json& values) {
      if (!values.is_array()) throw ConfigError("axis '" + key + "' needs a list of values");
      g.axes.push_back({key, std::vector<json>(values.begin(), values.end())});
    };
    if (axes.is_array()) {
      for (const auto& a : axes) {
        if (!a.is_object() || !a.contains("key") || !a.contains("values")) {
          throw ConfigError("axis entries need \"key\" and \"values\"");
        }
        add(a.at("key").get<std::string>(), a.at("values"));
      }
    } else if (axes.is_object()) {
      for (const auto& [k, v] : axes.items()) add(k, v);
    } else {
      throw ConfigError("grid axes must be a list or an object");
    }
  }
  if (j.contains("runs")) {
    if (!j.at("runs").is_array()) throw ConfigError("grid runs must be a list");
    for (const auto& r : j.at("runs")) {
      if (!r.is_object()) throw ConfigError("each grid run must be an object");
      g.runs.push_back(r);
    }
  }
  return g;
}

AblationGrid load_grid(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read grid " + path.string());
  try {
    auto g = grid_from_json(json::parse(in));
    if (g.base.contains("dataset")) {
      fs::path d(g.base["dataset"].get<std::string>());
      if (d.is_relative()) g.base["dataset"] = (path.parent_path() / d).lexically_normal().string();
    }
    return g;
  } catch (const json::exception& e) {
    throw ConfigError("grid " + path.string() + ": " + e.what());
  }
}

std::vector<ExperimentConfig> expand_grid(const AblationGrid& grid) {
  std::vector<ExperimentConfig> out;
  bool empty_axis = false;
  for (const auto& a : grid.axes) empty_axis = empty_axis || a.values.empty();
  if (!grid.axes.empty() && !empty_axis) {
    std::vector<size_t> pos(grid.axes.size(), 0);
    while (true) {
      json cfg = grid.base;
      std::string name;
      for (size_t i = 0; i < grid.axes.size(); ++i) {
        const auto& v = grid.axes[i].values[pos[i]];
        at_path(cfg, grid.axes[i].key) = v;
        name += (i ? "," : "") + grid.axes[i].key + "=" + value_label(v);
      }
      if (!grid.base.contains("name") || grid.base["name"].get<std::string>().empty()) cfg["name"] = name;
      else cfg["name"] = grid.base["name"].get<std::string>() + ":" + name;
      out.push_back(experiment_from_json(cfg));
      size_t i = grid.axes.size();
      while (i > 0 && ++pos[i - 1] == grid.axes[i - 1].values.size()) pos[--i] = 0;
      if (i == 0) break;
    }
  }
  for (size_t r = 0; r < grid.runs.size(); ++r) {
    json cfg = grid.base;
    cfg.merge_patch(grid.runs[r]);
    if (!grid.runs[r].contains("name")) cfg["name"] = "run" + std::to_string(r);
    out.push_back(experiment_from_json(cfg));
  }
  return out;
}

json to_json(const AblationRow& r) {
  return {{"hash", r.hash},
          {"name", r.name},
          {"decoder", r.decoder},
          {"sr_to_decoder", r.sr_to_decoder},
          {"modality", r.modality},
          {"projection", r.projection},
          {"queries", r.queries},
          {"stgcn", r.stgcn},
          {"emb_size", r.emb_size},
          {"status", r.status},
          {"train_accuracy", r.train_accuracy},
          {"accuracy", r.accuracy},
          {"weighted_f1", r.weighted_f1},
          {"uar", r.uar},
          {"ci_lo", r.ci_lo},
          {"ci_hi", r.ci_hi}};
}

AblationRow ablation_row_from_json(const json& j) {
  AblationRow r;
  try {
    r.hash = j.at("hash").get<std::string>();
    r.name = j.at("name").get<std::string>();
    r.decoder = j.at("decoder").get<std::string>();
    r.sr_to_decoder = j.at("sr_to_decoder").get<bool>();
    r.modality = j.at("modality").get<std::string>();
    r.projection = j.at("projection").get<std::string>();
    r.queries = j.at("queries").get<std::string>();
    r.stgcn = j.at("stgcn").get<bool>();
    r.emb_size = j.at("emb_size").get<long long>();
    r.status = j.at("status").get<std::string>();
    r.train_accuracy = j.at("train_accuracy").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    r.weighted_f1 = j.at("weighted_f1").get<double>();
    r.uar = j.at("uar").get<double>();
    r.ci_lo = j.at("ci_lo").get<double>();
    r.ci_hi = j.at("ci_hi").get<double>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("ablation result: ") + e.what());
  }
  return r;
}

namespace {

AblationRow describe(const ExperimentConfig& cfg, const std::vector<int>& queries) {
  AblationRow r;
  r.hash = config_hash(cfg);
  r.name = cfg.name;
  r.decoder = to_string(cfg.decoder);
  r.sr_to_decoder = cfg.sr_to_decoder;
  r.modality = cfg.decoder == DecoderKind::None ? "-" : to_string(cfg.sr_modality);
  r.projection = cfg.sr_to_decoder ? cfg.projection.label() : "-";
  r.queries = cfg.decoder == DecoderKind::PersonQuery ? cfg.query_policy.label() : "-";
  r.stgcn = cfg.stgcn;
  const bool needs_q = cfg.decoder == DecoderKind::PersonQuery && cfg.sr_mode() != SrMode::None;
  if (!needs_q || !queries.empty()) r.emb_size = embedding_size(cfg, queries);
  return r;
}

struct DataKey {
  std::string dataset;
  int frames;
  int limit;
  auto operator<=>(const DataKey&) const = default;
};

}  // namespace

AblationResult run_ablation(const std::vector<ExperimentConfig>& configs, const AblationOptions& opts) {
  AblationResult res;
  std::set<std::string> seen;
  std::map<DataKey, VideoSet> cache;
  std::unique_ptr<VideoSet> eval_set;
  std::map<std::string, std::pair<int, int>> stats_cache;  // dataset -> (max bodies, max faces)
  for (const auto& cfg : configs) {
    cfg.validate();
    const auto hash = config_hash(cfg);
    if (!seen.insert(hash).second) {
      ++res.duplicates;
      if (opts.log) *opts.log << "notice: duplicate config " << hash << " (" << cfg.name << ") skipped\n";
      continue;
    }
    const fs::path run_dir = opts.out_dir.empty() ? fs::path() : opts.out_dir / "runs" / hash;
    const fs::path result_file = run_dir / "result.json";
    if (opts.plan_only) {
      std::vector<int> q;
      if (cfg.decoder == DecoderKind::PersonQuery) {
        int mb = opts.max_bodies, mf = opts.max_faces;
        if ((mb <= 0 || mf <= 0) && !cfg.dataset.empty() && fs::exists(cfg.dataset)) {
          auto it = stats_cache.find(cfg.dataset);
          if (it == stats_cache.end()) {
            const auto m = read_manifest(cfg.dataset);
            const auto st = manifest_stats(m, annotations_on_disk(fs::path(cfg.dataset).parent_path()));
            it = stats_cache.emplace(cfg.dataset, std::pair{st.max_bodies_per_frame, st.max_faces_per_frame}).first;
          }
          if (mb <= 0) mb = it->second.first;
          if (mf <= 0) mf = it->second.second;
        }
        if (cfg.query_policy.mode == QueryPolicy::Mode::Fixed || (mb > 0 && mf > 0)) {
          q = resolve_queries(cfg, std::max(mb, 1), std::max(mf, 1));
        }
      }
      auto row = describe(cfg, q);
      row.status = "planned";
      res.rows.push_back(row);
      continue;
    }
    if (!run_dir.empty() && fs::exists(result_file)) {
      std::ifstream in(result_file);
      res.rows.push_back(ablation_row_from_json(json::parse(in)));
      res.rows.back().name = cfg.name;
      ++res.resumed;
      if (opts.log) *opts.log << "resume: " << cfg.name << " (" << hash << ")\n";
      continue;
    }
    const DataKey key{cfg.dataset, cfg.frames_per_video, cfg.limit_videos};
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, load_video_set(cfg.dataset, cfg.frames_per_video, cfg.limit_videos)).first;
    if (opts.log) *opts.log << "run: " << cfg.name << " (" << hash << ")\n";
    TrainOptions topts;
    topts.out_dir = run_dir;
    auto tr = train(cfg, it->second, topts);
    auto row = describe(cfg, tr.queries);
    row.train_accuracy = tr.train_accuracy;
    EvalResult ev;
    if (!opts.eval_manifest.empty()) {
      if (!eval_set) eval_set = std::make_unique<VideoSet>(load_video_set(opts.eval_manifest, cfg.frames_per_video));
      ev = evaluate(tr.model, *eval_set, cfg.batch_size);
    } else {
      ev = evaluate(tr.model, it->second, cfg.batch_size);
    }
    row.accuracy = ev.report.accuracy;
    row.weighted_f1 = ev.report.weighted_f1;
    row.uar = ev.report.uar;
    row.ci_lo = ev.report.ci.lo;
    row.ci_hi = ev.report.ci.hi;
    row.status = "done";
    if (!run_dir.empty()) {
      fs::create_directories(run_dir);
      std::ofstream(run_dir / "config.json") << to_json(cfg).dump(2) << '\n';
      std::ofstream(result_file) << to_json(row).dump(2) << '\n';
    }
    res.rows.push_back(row);
  }
  if (!opts.out_dir.empty()) {
    fs::create_directories(opts.out_dir);
    write_ablation_csv(res.rows, opts.out_dir / "ablation.csv");
    write_ablation_markdown(res.rows, opts.out_dir / "ablation.md");
  }
  return res;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

}  // namespace

void write_ablation_csv(const std::vector<AblationRow>& rows, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "hash,name,decoder,sr_to_decoder,modality,projection,queries,stgcn,emb_size,status,"
         "train_accuracy,accuracy,weighted_f1,uar,ci_lo,ci_hi\n";
  for (const auto& r : rows) {
    out << r.hash << ',' << csv_field(r.name) << ',' << r.decoder << ',' << (r.sr_to_decoder ? 1 : 0) << ','
        << r.modality << ',' << r.projection << ',' << r.queries << ',' << (r.stgcn ? 1 : 0) << ','
        << (r.emb_size >= 0 ? std::to_string(r.emb_size) : "") << ',' << csv_field(r.status) << ','
        << fmt(r.train_accuracy) << ',' << fmt(r.accuracy) << ',' << fmt(r.weighted_f1) << ',' << fmt(r.uar)
        << ',' << fmt(r.ci_lo) << ',' << fmt(r.ci_hi) << '\n';
  }
}

void write_ablation_markdown(const std::vector<AblationRow>& rows, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "| name | decoder | SR to decoder | modality | projection | queries | stgcn | Emb_size | train acc | acc | "
         "F1 | UAR | 95% CI |\n";
  out << "|---|---|---|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    const bool planned = r.status == "planned";
    auto m = [&](double v) { return planned ? std::string("-") : fmt(v); };
    out << "| " << r.name << " | " << r.decoder << " | " << (r.sr_to_decoder ? "yes" : "no") << " | " << r.modality
        << " | " << r.projection << " | " << r.queries << " | " << (r.stgcn ? "yes" : "no") << " | "
        << (r.emb_size >= 0 ? std::to_string(r.emb_size) : "-") << " | " << m(r.train_accuracy) << " | "
        << m(r.accuracy) << " | " << m(r.weighted_f1) << " | " << m(r.uar) << " | "
        << (planned ? std::string("-") : "[" + fmt(r.ci_lo) + ", " + fmt(r.ci_hi) + "]") << " |\n";
  }
}

}  // namespace vemd
