#include "vemd/trainer.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include <ATen/CPUGeneratorImpl.h>
#include <nlohmann/json.hpp>

#include "vemd/common.hpp"
#include "vemd/losses.hpp"
#include "vemd/skeleton.hpp"

namespace vemd {

using json = nlohmann::json;
namespace fs = std::filesystem;

void write_trace(const std::vector<LossTraceRow>& rows, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,L_cls,L_p1,L_p2,L_mmd,total\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.step << ',' << r.l_cls << ',' << r.l_p1 << ',' << r.l_p2 << ',' << r.l_mmd << ',' << r.total << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<LossTraceRow> read_trace(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "step,L_cls,L_p1,L_p2,L_mmd,total") throw FormatError("unexpected trace header in " + path.string());
  std::vector<LossTraceRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    LossTraceRow r;
    if (!(ss >> r.step >> r.l_cls >> r.l_p1 >> r.l_p2 >> r.l_mmd >> r.total)) {
      throw FormatError("bad trace row in " + path.string());
    }
    rows.push_back(r);
  }
  return rows;
}

std::vector<int> resolve_queries(const ExperimentConfig& cfg, int max_bodies, int max_faces) {
  std::vector<int> q;
  if (cfg.decoder != DecoderKind::PersonQuery) return q;
  for (const auto& name : sr_skeletons(cfg.decoder, cfg.sr_modality)) {
    q.push_back(cfg.query_policy.resolve(name == kBodySkeleton ? max_bodies : max_faces));
  }
  return q;
}

namespace {

// Structural targets for one SR modality, per video.
struct ModalityTargets {
  std::string skeleton;
  bool body = true;
  std::vector<torch::Tensor> heatmaps;                          // (T, C, H, W)
  std::vector<std::vector<std::vector<PersonLimbs>>> persons;   // [video][frame][person]
  AdjacencyMatrix adjacency;
};

std::vector<ModalityTargets> build_targets(const ExperimentConfig& cfg, const VideoSet& data) {
  std::vector<ModalityTargets> out;
  const int hs = 8 * cfg.encoder.latent_size;
  for (const auto& name : sr_skeletons(cfg.decoder, cfg.sr_modality)) {
    ModalityTargets t;
    t.skeleton = name;
    t.body = name == kBodySkeleton;
    const auto& skel = SkeletonRegistry::builtin().get(name);
    t.adjacency = build_adjacency(skel);
    std::vector<int> face_map;
    if (!t.body && name != kFaceDenseSkeleton) face_map = limb_index_map(face_dense_skeleton(), skel);
    for (const auto& v : data.videos) {
      std::vector<std::vector<PersonLimbs>> frames;
      for (const auto& f : v.annotations) {
        std::vector<PersonLimbs> ps = t.body ? f.persons_body : f.persons_face;
        if (!face_map.empty()) {
          for (auto& p : ps) p = select_limbs(p, face_map);
        }
        for (const auto& p : ps) {
          if (p.num_limbs() != skel.num_limbs()) {
            throw FormatError(v.video_id + ": annotation has " + std::to_string(p.num_limbs()) + " limbs, " +
                              name + " needs " + std::to_string(skel.num_limbs()));
          }
        }
        frames.push_back(std::move(ps));
      }
      if (cfg.decoder == DecoderKind::Heatmap) {
        std::vector<torch::Tensor> maps;
        for (const auto& ps : frames) maps.push_back(render_limb_heatmaps(ps, skel.num_limbs(), hs, hs, cfg.heatmap_sigma));
        t.heatmaps.push_back(torch::stack(maps));
      } else {
        t.persons.push_back(std::move(frames));
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

torch::Tensor batch_frames(const VideoSet& data, const std::vector<size_t>& idx) {
  std::vector<torch::Tensor> f;
  for (auto i : idx) f.push_back(data.videos[i].frames);
  return torch::stack(f);
}

torch::Tensor batch_labels(const VideoSet& data, const std::vector<size_t>& idx) {
  std::vector<int64_t> l;
  for (auto i : idx) l.push_back(data.videos[i].label);
  return torch::tensor(l, torch::kLong);
}

// L_p for one SR modality over a batch; PersonQuery losses average per frame.
torch::Tensor sr_loss(const ModalityTargets& t, const VeMdOutput& out, size_t m, const std::vector<size_t>& idx,
                      const LossWeights& w, LossBundle& bundle) {
  if (!out.heatmaps.empty()) {
    std::vector<torch::Tensor> tg;
    for (auto i : idx) tg.push_back(t.heatmaps[i]);
    return heatmap_loss(out.heatmaps[m], torch::cat(tg));
  }
  const auto& pq = out.person_query[m];
  const int64_t frames = pq.limbs.size(0) / static_cast<int64_t>(idx.size());
  torch::Tensor limb_sum, adj_sum;
  int64_t n = 0;
  for (size_t b = 0; b < idx.size(); ++b) {
    for (int64_t f = 0; f < frames; ++f) {
      const auto row = static_cast<int64_t>(b) * frames + f;
      const auto& persons = t.persons[idx[b]][f];
      auto pred = pq.limbs[row];
      auto match = match_queries(pred, persons);
      auto ll = limb_loss(pred, persons, match);
      auto la = adjacency_loss(pq.adjacency[row], match, t.adjacency);
      limb_sum = limb_sum.defined() ? limb_sum + ll : ll;
      adj_sum = adj_sum.defined() ? adj_sum + la : la;
      ++n;
    }
  }
  auto l_limb = limb_sum / static_cast<double>(n);
  auto l_adj = adj_sum / static_cast<double>(n);
  bundle.l_limb.push_back(l_limb);
  bundle.l_adj.push_back(l_adj);
  return personquery_sr_loss(l_limb, l_adj, w);
}

double value_of(const torch::Tensor& t) { return t.defined() ? t.item<double>() : 0.0; }

void warm_up_context(VeMd& model, const VideoSet& data, const ExperimentConfig& cfg, std::ostream* log) {
  auto& ctx = model->encoder->context;
  torch::manual_seed(derive_seed(cfg.seed, "context-warmup"));
  auto probe = torch::nn::Linear(cfg.encoder.context_dim, data.num_classes());
  std::vector<torch::Tensor> params = ctx->parameters();
  for (auto& p : probe->parameters()) params.push_back(p);
  torch::optim::Adam opt(params, torch::optim::AdamOptions(1e-3));
  std::mt19937_64 rng(derive_seed(cfg.seed, "context-warmup-order"));
  std::vector<size_t> order(data.videos.size());
  std::iota(order.begin(), order.end(), 0);
  ctx->train();
  for (int e = 0; e < cfg.context_warmup_epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (size_t s = 0; s < order.size(); s += cfg.batch_size) {
      std::vector<size_t> idx(order.begin() + s, order.begin() + std::min(order.size(), s + cfg.batch_size));
      auto frames = batch_frames(data, idx);
      const auto b = frames.size(0), t = frames.size(1);
      auto feats = ctx->pooled_features(frames.flatten(0, 1)).view({b, t, -1}).mean(1);
      auto loss = classification_loss(probe(feats), batch_labels(data, idx));
      opt.zero_grad();
      loss.backward();
      opt.step();
      total += loss.item<double>();
    }
    if (log) *log << "context warm-up epoch " << e + 1 << " loss " << total << '\n';
  }
}

}  // namespace

TrainResult train(const ExperimentConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  if (cfg.dataset.empty()) throw ConfigError("config has no dataset");
  auto data = load_video_set(cfg.dataset, cfg.frames_per_video, cfg.limit_videos);
  return train(cfg, data, opts);
}

TrainResult train(const ExperimentConfig& cfg, const VideoSet& data, const TrainOptions& opts) {
  cfg.validate();
  if (data.videos.empty()) throw ArgumentError("training split is empty");
  for (const auto& v : data.videos) {
    if (v.frames.size(0) != cfg.frames_per_video) throw ShapeError(v.video_id + ": frame count differs from config");
  }
  TrainResult res;
  res.queries = resolve_queries(cfg, data.max_bodies, data.max_faces);
  res.model = VeMd(cfg, data.num_classes(), res.queries);
  auto& model = res.model;
  const auto targets = build_targets(cfg, data);
  const auto overflow_start = match_overflow_count();

  if (cfg.encoder.context_frozen) {
    if (cfg.context_warmup_epochs > 0) warm_up_context(model, data, cfg, opts.log);
    model->encoder->freeze_context();
  }

  std::vector<torch::Tensor> params;
  for (auto& p : model->parameters())
    if (p.requires_grad()) params.push_back(p);
  torch::optim::Adam opt(params, torch::optim::AdamOptions(cfg.optimizer.lr));

  std::mt19937_64 order_rng(derive_seed(cfg.seed, "data-order"));
  auto prior_gen = at::make_generator<at::CPUGeneratorImpl>(derive_seed(cfg.seed, "mmd-prior"));
  std::vector<size_t> order(data.videos.size());
  std::iota(order.begin(), order.end(), 0);

  bool stop = false;
  for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    model->train();
    std::shuffle(order.begin(), order.end(), order_rng);
    for (size_t s = 0; s < order.size() && !stop; s += cfg.batch_size) {
      std::vector<size_t> idx(order.begin() + s, order.begin() + std::min(order.size(), s + cfg.batch_size));
      auto out = model(batch_frames(data, idx));
      LossBundle bundle;
      bundle.l_cls = classification_loss(out.emotion.logits, batch_labels(data, idx));
      for (size_t m = 0; m < targets.size(); ++m) {
        auto lp = sr_loss(targets[m], out, m, idx, cfg.weights, bundle);
        (m == 0 ? bundle.l_p1 : bundle.l_p2) = lp;
      }
      if (cfg.encoder.variational && out.latent.z2.size(0) >= 2) {
        auto z = out.latent.z2.flatten(1);
        auto prior = at::randn(z.sizes(), prior_gen, z.options());
        bundle.l_mmd = mmd_loss(z, prior);
      }
      auto total = total_loss(bundle, cfg.weights);
      opt.zero_grad();
      total.backward();
      opt.step();
      ++res.steps;
      res.trace.push_back({res.steps, value_of(bundle.l_cls), value_of(bundle.l_p1), value_of(bundle.l_p2),
                           value_of(bundle.l_mmd), value_of(bundle.total)});
      if (cfg.max_steps > 0 && res.steps >= cfg.max_steps) stop = true;
    }
    res.epochs_run = epoch + 1;
    if (cfg.target_train_accuracy > 0.0) {
      const double acc = evaluate(model, data, cfg.batch_size).report.accuracy;
      res.epoch_accuracy.push_back(acc);
      if (opts.log) {
        *opts.log << "epoch " << res.epochs_run << " loss " << res.trace.back().total << " train_acc " << acc << '\n';
      }
      if (acc >= cfg.target_train_accuracy) stop = true;
    } else if (opts.log) {
      *opts.log << "epoch " << res.epochs_run << " loss " << res.trace.back().total << '\n';
    }
  }
  res.train_accuracy = res.epoch_accuracy.empty() ? evaluate(model, data, cfg.batch_size).report.accuracy
                                                  : res.epoch_accuracy.back();
  res.match_overflows = match_overflow_count() - overflow_start;
  if (res.match_overflows > 0 && opts.log) {
    *opts.log << "warning: " << res.match_overflows << " frames had more persons than queries (Q="
              << (res.queries.empty() ? 0 : *std::min_element(res.queries.begin(), res.queries.end())) << ")\n";
  }
  res.checkpoint_hash = model_hash(*model);
  if (!opts.out_dir.empty()) {
    fs::create_directories(opts.out_dir);
    res.checkpoint = opts.out_dir / "model.pt";
    res.trace_path = opts.out_dir / "trace.csv";
    save_checkpoint(model, data.class_names, res.checkpoint);
    write_trace(res.trace, res.trace_path);
    json summary{{"config_hash", config_hash(cfg)},
                 {"checkpoint_hash", res.checkpoint_hash},
                 {"epochs", res.epochs_run},
                 {"steps", res.steps},
                 {"train_accuracy", res.train_accuracy},
                 {"match_overflows", res.match_overflows},
                 {"queries", res.queries}};
    std::ofstream(opts.out_dir / "train_summary.json") << summary.dump(2) << '\n';
  }
  return res;
}

void save_checkpoint(VeMd& model, const std::vector<std::string>& class_names, const fs::path& path) {
  torch::serialize::OutputArchive ar;
  model->save(ar);
  json meta{{"format_version", kCheckpointFormat},
            {"class_names", class_names},
            {"queries", model->queries()},
            {"num_classes", model->num_classes()}};
  ar.write("vemd.meta", c10::IValue(meta.dump()));
  ar.write("vemd.config", c10::IValue(to_json(model->config()).dump()));
  try {
    ar.save_to(path.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot write checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
}

LoadedModel load_checkpoint(const fs::path& path, const std::optional<ExperimentConfig>& expected) {
  if (!fs::exists(path)) throw IoError("checkpoint not found: " + path.string());
  torch::serialize::InputArchive ar;
  c10::IValue meta_v, cfg_v;
  try {
    ar.load_from(path.string());
    ar.read("vemd.meta", meta_v);
    ar.read("vemd.config", cfg_v);
  } catch (const c10::Error& e) {
    throw FormatError("not a VE-MD checkpoint: " + path.string());
  }
  const auto meta = json::parse(meta_v.toStringRef());
  if (meta.value("format_version", 0) != kCheckpointFormat) {
    throw FormatError("unsupported checkpoint format in " + path.string());
  }
  LoadedModel lm;
  lm.config = experiment_from_json(json::parse(cfg_v.toStringRef()));
  if (expected && canonical_string(*expected) != canonical_string(lm.config)) {
    throw ConfigError("checkpoint " + path.string() + " was trained with a different config");
  }
  lm.class_names = meta.at("class_names").get<std::vector<std::string>>();
  lm.model = VeMd(lm.config, meta.at("num_classes").get<int>(), meta.at("queries").get<std::vector<int>>());
  try {
    lm.model->load(ar);
  } catch (const c10::Error& e) {
    throw FormatError("checkpoint parameters do not match its config: " + std::string(e.what_without_backtrace()));
  }
  if (lm.config.encoder.context_frozen) lm.model->encoder->freeze_context();
  lm.model->eval();
  return lm;
}

EvalResult evaluate(VeMd& model, const VideoSet& data, int batch_size) {
  if (data.videos.empty()) throw ArgumentError("cannot evaluate an empty split");
  torch::NoGradGuard ng;
  const bool was_training = model->is_training();
  model->eval();
  EvalResult r;
  for (size_t s = 0; s < data.videos.size(); s += batch_size) {
    std::vector<size_t> idx;
    for (size_t i = s; i < std::min(data.videos.size(), s + batch_size); ++i) idx.push_back(i);
    auto logits = model(batch_frames(data, idx)).emotion.logits.to(torch::kFloat64);
    for (size_t b = 0; b < idx.size(); ++b) {
      const auto& v = data.videos[idx[b]];
      auto row = logits[b].contiguous();
      std::vector<double> l(row.data_ptr<double>(), row.data_ptr<double>() + row.numel());
      r.predictions.push_back({v.video_id, l, argmax_lowest(row), v.label});
    }
  }
  if (was_training) model->train();
  r.report = compute_report(r.predictions, model->num_classes(), data.class_names);
  return r;
}

EvalResult evaluate_checkpoint(const fs::path& checkpoint, const fs::path& manifest, const fs::path& out_dir) {
  auto lm = load_checkpoint(checkpoint);
  auto data = load_video_set(manifest, lm.config.frames_per_video);
  if (data.num_classes() != lm.model->num_classes()) {
    throw ConfigError("manifest has " + std::to_string(data.num_classes()) + " classes, checkpoint has " +
                      std::to_string(lm.model->num_classes()));
  }
  auto r = evaluate(lm.model, data, lm.config.batch_size);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_predictions(r.predictions, out_dir / "predictions.jsonl");
    std::ofstream(out_dir / "eval.json") << to_json(r.report).dump(2) << '\n';
  }
  return r;
}

}  // namespace vemd
