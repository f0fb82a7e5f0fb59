#include "runner.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <set>

#include "explain.hpp"
#include "image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace kfwc::runner {

namespace {

void require_keys(const json& j, const std::set<std::string>& allowed,
                  const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key))
      throw ConfigError("unknown config key '" + key + "' in " + where);
}

data::SyntheticSpec synthetic_from_json(const json& j) {
  require_keys(j, {"train_groups", "valid_groups", "test_groups", "image_size", "prevalence",
                   "noise", "seed"},
               "dataset.synthetic");
  data::SyntheticSpec s;
  s.train_groups = j.value("train_groups", s.train_groups);
  s.valid_groups = j.value("valid_groups", s.valid_groups);
  s.test_groups = j.value("test_groups", s.test_groups);
  s.image_size = j.value("image_size", s.image_size);
  if (j.contains("prevalence")) {
    const auto& p = j["prevalence"];
    if (!p.is_array() || p.size() != 10)
      throw ConfigError("dataset.synthetic.prevalence must list 10 values");
    for (int i = 0; i < 10; ++i) s.prevalence[i] = p[i].get<double>();
  }
  s.noise = j.value("noise", s.noise);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

json synthetic_to_json(const data::SyntheticSpec& s) {
  return json{{"train_groups", s.train_groups}, {"valid_groups", s.valid_groups},
              {"test_groups", s.test_groups},   {"image_size", s.image_size},
              {"prevalence", s.prevalence},     {"noise", s.noise},
              {"seed", s.seed}};
}

}  // namespace

json RunConfig::to_json() const {
  json j;
  if (dataset_path)
    j["dataset"]["path"] = *dataset_path;
  else if (synthetic)
    j["dataset"]["synthetic"] = synthetic_to_json(*synthetic);
  j["trunk"] = trunk;
  j["hyperparams"] = hp.to_json();
  j["out_dir"] = out_dir;
  j["seed"] = seed;
  j["flags"] = json{{"freeze_encoders", freeze_encoders},
                    {"class_weights", class_weights},
                    {"overlay_alpha", overlay_alpha}};
  j["threads"] = threads;
  return j;
}

std::string RunConfig::config_hash() const { return hex64(fnv1a64(to_json().dump())); }

RunConfig parse_run_config(const json& j) {
  require_keys(j, {"dataset", "trunk", "hyperparams", "out_dir", "seed", "flags", "threads"},
               "config");
  RunConfig cfg;
  if (!j.contains("dataset")) throw ConfigError("config requires a 'dataset' section");
  const json& d = j["dataset"];
  require_keys(d, {"path", "synthetic"}, "dataset");
  if (d.contains("path") == d.contains("synthetic"))
    throw ConfigError("dataset needs exactly one of 'path' or 'synthetic'");
  if (d.contains("path")) cfg.dataset_path = d["path"].get<std::string>();
  if (d.contains("synthetic")) cfg.synthetic = synthetic_from_json(d["synthetic"]);

  cfg.trunk = j.value("trunk", cfg.trunk);
  (void)model::trunk_config(cfg.trunk);  // validate the name now
  if (j.contains("hyperparams")) {
    require_keys(j["hyperparams"],
                 {"base_lr", "momentum", "weight_decay", "batch_size", "epochs_stage1",
                  "epochs_stage2", "lr_decay_period", "lr_decay_factor", "seed"},
                 "hyperparams");
    cfg.hp = train::Hyperparams::from_json(j["hyperparams"]);
  }
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.hp.seed = cfg.seed;
  if (j.contains("flags")) {
    require_keys(j["flags"], {"freeze_encoders", "class_weights", "overlay_alpha"}, "flags");
    cfg.freeze_encoders = j["flags"].value("freeze_encoders", false);
    cfg.class_weights = j["flags"].value("class_weights", false);
    cfg.overlay_alpha = j["flags"].value("overlay_alpha", 0.5);
    if (cfg.overlay_alpha < 0 || cfg.overlay_alpha > 1)
      throw ConfigError("flags.overlay_alpha must lie in [0,1]");
  }
  cfg.threads = j.value("threads", 0);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
  const auto bytes = read_file(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return parse_run_config(j);
}

RunConfig with_overrides(RunConfig cfg, const Overrides& ov) {
  if (!ov.out_dir.empty()) cfg.out_dir = ov.out_dir;
  if (ov.seed >= 0) {
    cfg.seed = static_cast<uint64_t>(ov.seed);
    cfg.hp.seed = cfg.seed;
  }
  if (cfg.out_dir.empty()) throw ConfigError("no output directory (config out_dir or --out)");
  return cfg;
}

json RunManifest::to_json() const {
  json j;
  j["command"] = command;
  j["config_hash"] = config_hash;
  j["tool_version"] = tool_version;
  j["seed"] = seed;
  json ck = json::array();
  for (const auto& [path, hash] : input_checkpoints)
    ck.push_back({{"path", path}, {"hash", hash}});
  j["input_checkpoints"] = ck;
  j["artifacts"] = artifacts;
  j["wall_seconds"] = wall_seconds;
  return j;
}

namespace {

class PhaseScope {
 public:
  PhaseScope(std::string command, const RunConfig* cfg, std::string out_dir)
      : out_dir_(std::move(out_dir)), start_(std::chrono::steady_clock::now()) {
    manifest_.command = std::move(command);
    if (cfg) {
      manifest_.config_hash = cfg->config_hash();
      manifest_.seed = cfg->seed;
    }
    fs::create_directories(out_dir_);
  }

  const std::string& dir() const { return out_dir_; }

  std::string path(const std::string& rel) { return (fs::path(out_dir_) / rel).string(); }

  void artifact(const std::string& rel) { manifest_.artifacts.push_back(rel); }

  void input_checkpoint(const std::string& path) {
    const auto bytes = read_file(path);
    manifest_.input_checkpoints.emplace_back(path, hex64(fnv1a64(bytes.data(), bytes.size())));
  }

  // Atomic: write to a temp name, then rename into place.
  void write_text(const std::string& rel, const std::string& text) {
    const std::string tmp = path(rel) + ".tmp";
    write_file(tmp, text.data(), text.size());
    fs::rename(tmp, path(rel));
    artifact(rel);
  }

  RunManifest finish() {
    manifest_.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    const std::string tmp = path("run_manifest.json.tmp");
    const std::string text = manifest_.to_json().dump(2) + "\n";
    write_file(tmp, text.data(), text.size());
    fs::rename(tmp, path("run_manifest.json"));
    return manifest_;
  }

 private:
  RunManifest manifest_;
  std::string out_dir_;
  std::chrono::steady_clock::time_point start_;
};

// Datasets referenced by path are loaded as-is; synthetic specs materialize
// (deterministically) under <run>/dataset.
train::LoadedDataset resolve_dataset(const RunConfig& cfg, PhaseScope* scope) {
  if (cfg.dataset_path) {
    if (!fs::exists(*cfg.dataset_path))
      throw ArtifactError("dataset directory not found: " + *cfg.dataset_path);
    return train::load_dataset(*cfg.dataset_path);
  }
  const std::string dir = scope ? scope->path("dataset") : cfg.out_dir + "/dataset";
  auto ds = data::generate_synthetic_dataset(*cfg.synthetic);
  data::write_dataset(ds, dir);
  if (scope) scope->artifact("dataset/manifest.json");
  return train::LoadedDataset(std::move(ds.manifest), dir);
}

std::string log_to_jsonl(const std::vector<train::EpochLog>& log) {
  std::string out;
  for (const auto& e : log) out += e.to_json().dump() + "\n";
  return out;
}

train::TrainOptions train_options(const RunConfig& cfg) {
  train::TrainOptions opt;
  opt.threads = cfg.threads;
  opt.freeze_encoders = cfg.freeze_encoders;
  opt.class_weights = cfg.class_weights;
  opt.sink = [](const train::EpochLog& e) {
    std::fprintf(stderr, "  epoch %3d  lr %.6f  loss %.4f  val_auroc %.4f\n", e.epoch, e.lr,
                 e.train_loss, e.val_auroc);
  };
  return opt;
}

metrics::MetricReport evaluate_checkpoint(const train::Checkpoint& ckpt,
                                          const train::LoadedDataset& ds,
                                          const RunConfig& cfg, const std::string& split) {
  metrics::MetricReport rep;
  if (ckpt.stage == "diagnosis") {
    auto m = train::diagnosis_model_from(ckpt);
    rep = metrics::build_report(train::eval_diagnosis(m, ds, split, cfg.threads));
  } else {
    auto m = train::sign_model_from(ckpt);
    rep = metrics::build_report(train::eval_signs(m, ds, split, cfg.threads));
  }
  rep.config_hash = cfg.config_hash();
  rep.seed = cfg.seed;
  return rep;
}

train::Checkpoint load_checkpoint_checked(const std::string& path) {
  if (!fs::exists(path)) throw ArtifactError("checkpoint not found: " + path);
  return train::load_checkpoint(path);
}

}  // namespace

RunManifest phase_gen_data(const RunConfig& cfg) {
  if (!cfg.synthetic) throw ConfigError("gen-data requires dataset.synthetic in the config");
  PhaseScope scope("gen-data", &cfg, cfg.out_dir);
  auto ds = data::generate_synthetic_dataset(*cfg.synthetic);
  data::write_dataset(ds, scope.dir());
  scope.artifact("manifest.json");
  for (const auto& [id, _] : ds.images) scope.artifact("images/" + id + ".png");
  return scope.finish();
}

RunManifest phase_pretrain(const RunConfig& cfg, data::Modality branch) {
  PhaseScope scope("pretrain", &cfg, cfg.out_dir);
  auto ds = resolve_dataset(cfg, &scope);
  const bool is_f = branch == data::Modality::Fundus;
  std::fprintf(stderr, "pretrain %s (trunk %s, %d epochs)\n", is_f ? "F" : "O",
               cfg.trunk.c_str(), cfg.hp.epochs_stage1);
  auto result = train::pretrain_signs(branch, ds, cfg.hp, model::trunk_config(cfg.trunk),
                                      train_options(cfg));
  const std::string name = is_f ? "checkpoint_signs_F.kfwc" : "checkpoint_signs_O.kfwc";
  train::save_checkpoint(result.checkpoint, scope.path(name));
  scope.artifact(name);
  scope.write_text("train_log.jsonl", log_to_jsonl(result.log));
  return scope.finish();
}

RunManifest phase_train(const RunConfig& cfg, const std::string& ckpt_f_path,
                        const std::string& ckpt_o_path) {
  PhaseScope scope("train", &cfg, cfg.out_dir);
  auto ds = resolve_dataset(cfg, &scope);
  auto ckpt_f = load_checkpoint_checked(ckpt_f_path);
  auto ckpt_o = load_checkpoint_checked(ckpt_o_path);
  scope.input_checkpoint(ckpt_f_path);
  scope.input_checkpoint(ckpt_o_path);
  std::fprintf(stderr, "train diagnosis (knowledge arm, %d epochs)\n", cfg.hp.epochs_stage2);
  auto result = train::finetune_diagnosis(ckpt_f, ckpt_o, ds, cfg.hp, train_options(cfg));
  train::save_checkpoint(result.checkpoint, scope.path("checkpoint_diagnosis.kfwc"));
  scope.artifact("checkpoint_diagnosis.kfwc");
  scope.write_text("train_log.jsonl", log_to_jsonl(result.log));
  return scope.finish();
}

RunManifest phase_ablate(const RunConfig& cfg) {
  PhaseScope scope("ablate", &cfg, cfg.out_dir);
  auto ds = resolve_dataset(cfg, &scope);
  const auto trunk = model::trunk_config(cfg.trunk);
  const auto opt = train_options(cfg);

  std::fprintf(stderr, "ablate: pretrain F\n");
  auto pre_f = train::pretrain_signs(data::Modality::Fundus, ds, cfg.hp, trunk, opt);
  std::fprintf(stderr, "ablate: pretrain O\n");
  auto pre_o = train::pretrain_signs(data::Modality::OCT, ds, cfg.hp, trunk, opt);
  fs::create_directories(scope.path("pretrain"));
  train::save_checkpoint(pre_f.checkpoint, scope.path("pretrain/checkpoint_signs_F.kfwc"));
  train::save_checkpoint(pre_o.checkpoint, scope.path("pretrain/checkpoint_signs_O.kfwc"));
  scope.artifact("pretrain/checkpoint_signs_F.kfwc");
  scope.artifact("pretrain/checkpoint_signs_O.kfwc");
  scope.write_text("pretrain/train_log_F.jsonl", log_to_jsonl(pre_f.log));
  scope.write_text("pretrain/train_log_O.jsonl", log_to_jsonl(pre_o.log));

  std::fprintf(stderr, "ablate: knowledge arm\n");
  auto knowledge = train::finetune_diagnosis(pre_f.checkpoint, pre_o.checkpoint, ds, cfg.hp, opt);
  std::fprintf(stderr, "ablate: scratch arm (w/o knowledge)\n");
  auto scratch = train::train_scratch_baseline(ds, cfg.hp, trunk, opt);
  fs::create_directories(scope.path("knowledge"));
  fs::create_directories(scope.path("scratch"));
  train::save_checkpoint(knowledge.checkpoint, scope.path("knowledge/checkpoint_diagnosis.kfwc"));
  train::save_checkpoint(scratch.checkpoint, scope.path("scratch/checkpoint_diagnosis.kfwc"));
  scope.artifact("knowledge/checkpoint_diagnosis.kfwc");
  scope.artifact("scratch/checkpoint_diagnosis.kfwc");
  scope.write_text("knowledge/train_log.jsonl", log_to_jsonl(knowledge.log));
  scope.write_text("scratch/train_log.jsonl", log_to_jsonl(scratch.log));

  auto rep_k = evaluate_checkpoint(knowledge.checkpoint, ds, cfg, "test");
  auto rep_s = evaluate_checkpoint(scratch.checkpoint, ds, cfg, "test");
  json rj;
  rj["rows"]["with-knowledge"] = rep_k.to_json();
  rj["rows"]["w/o-knowledge"] = rep_s.to_json();
  rj["config_hash"] = cfg.config_hash();
  rj["seed"] = cfg.seed;
  scope.write_text("report.json", rj.dump(2) + "\n");
  scope.write_text("report.txt", metrics::comparison_table({"with-knowledge", "w/o-knowledge"},
                                                           {rep_k, rep_s}));
  return scope.finish();
}

RunManifest phase_evaluate(const RunConfig& cfg, const std::string& ckpt_path) {
  PhaseScope scope("evaluate", &cfg, cfg.out_dir);
  auto ds = resolve_dataset(cfg, &scope);
  auto ckpt = load_checkpoint_checked(ckpt_path);
  scope.input_checkpoint(ckpt_path);
  auto rep = evaluate_checkpoint(ckpt, ds, cfg, "test");
  scope.write_text("report.json", rep.to_json().dump(2) + "\n");
  scope.write_text("report.txt", rep.to_text());
  return scope.finish();
}

RunManifest phase_explain(const RunConfig& cfg, const std::string& ckpt_path,
                          const std::vector<std::string>& sample_ids) {
  PhaseScope scope("explain", &cfg, cfg.out_dir);
  auto ds = resolve_dataset(cfg, &scope);
  auto ckpt = load_checkpoint_checked(ckpt_path);
  scope.input_checkpoint(ckpt_path);
  if (ckpt.stage != "diagnosis")
    throw ConfigError("explain requires a diagnosis checkpoint, got '" + ckpt.stage + "'");
  auto m = train::diagnosis_model_from(ckpt);

  std::vector<std::string> ids = sample_ids;
  if (ids.empty()) ids = ds.split("test");
  fs::create_directories(scope.path("overlays"));

  json loc;
  for (const auto& id : ids) {
    const auto& g = ds.group(id);
    const Tensor3 xf = ds.tensor(g.fundus);
    const Tensor3 xo = ds.tensor(g.oct);
    const auto scores = m.scores(xf, xo);
    const int cls = static_cast<int>(model::predict_diagnosis(scores));
    auto [map_f, map_o] = explain::gradcam(m, xf, xo, cls);

    for (const auto* map : {&map_f, &map_o}) {
      const Tensor3& base = map->branch == 'F' ? xf : xo;
      const Tensor3 overlay = explain::render_overlay(*map, base, cfg.overlay_alpha);
      ImageU8 px;
      px.c = 3;
      px.h = overlay.h;
      px.w = overlay.w;
      px.bytes.resize(static_cast<size_t>(px.h) * px.w * 3);
      for (int y = 0; y < px.h; ++y)
        for (int x = 0; x < px.w; ++x)
          for (int ch = 0; ch < 3; ++ch)
            px.at(y, x, ch) = static_cast<uint8_t>(
                std::lround(std::clamp(overlay.at(ch, y, x), 0.f, 1.f) * 255.f));
      const std::string name =
          id + "_" + std::string(1, map->branch) + "_" + std::to_string(cls) + ".png";
      const auto png = encode_png(px);
      write_file(scope.path("overlays/" + name), png.data(), png.size());
      scope.artifact("overlays/" + name);
    }

    json entry;
    entry["class"] = cls;
    entry["correct"] = cls == static_cast<int>(g.disease);
    for (const auto* map : {&map_f, &map_o}) {
      const auto mod = map->branch == 'F' ? data::Modality::Fundus : data::Modality::OCT;
      std::vector<data::LesionBox> boxes;
      for (const auto& b : g.lesion_boxes)
        if (b.modality == mod) boxes.push_back(b);
      const auto& rec = map->branch == 'F' ? g.fundus : g.oct;
      const auto [iw, ih] = ds.image_size(rec);
      if (boxes.empty())
        entry[std::string(1, map->branch)] = nullptr;
      else
        entry[std::string(1, map->branch)] = explain::localization_score(*map, boxes, iw, ih);
    }
    loc[id] = entry;
  }
  json out;
  out["localization"] = loc;
  out["config_hash"] = cfg.config_hash();
  out["seed"] = cfg.seed;
  scope.write_text("localization.json", out.dump(2) + "\n");
  return scope.finish();
}

RunManifest phase_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  if (run_dirs.empty()) throw ConfigError("report: no run directories given");
  PhaseScope scope("report", nullptr, out_dir);

  std::vector<std::string> names;
  std::vector<json> reports;
  for (const auto& dir : run_dirs) {
    const fs::path p = fs::path(dir) / "report.json";
    if (!fs::exists(p)) throw ArtifactError("no report.json under " + dir);
    const auto bytes = read_file(p.string());
    json j = json::parse(bytes.begin(), bytes.end());
    const std::string base = fs::path(dir).filename().string();
    if (j.contains("rows")) {
      for (const auto& [row, rep] : j["rows"].items()) {
        names.push_back(base + ":" + row);
        reports.push_back(rep);
      }
    } else {
      names.push_back(base);
      reports.push_back(j);
    }
  }

  json merged;
  for (size_t i = 0; i < names.size(); ++i) merged["rows"][names[i]] = reports[i];
  // All pairwise deltas; Table-6 style "Improve" rows.
  json improve;
  for (size_t a = 0; a < names.size(); ++a) {
    for (size_t b = a + 1; b < names.size(); ++b) {
      json delta;
      for (const auto& [metric, vb] : reports[b]["metrics"].items()) {
        const auto& va = reports[a]["metrics"][metric];
        if (!va.is_null() && !vb.is_null())
          delta[metric] = vb.get<double>() - va.get<double>();
      }
      improve["Improve(" + names[b] + " - " + names[a] + ")"] = delta;
    }
  }
  merged["improve"] = improve;
  scope.write_text("report.json", merged.dump(2) + "\n");

  // Text table: one row per run, then the delta rows.
  std::string text;
  {
    std::vector<metrics::MetricReport> rows;
    for (const auto& rep : reports) {
      metrics::MetricReport r;
      r.stage = rep.value("stage", "");
      for (const auto& [metric, v] : rep["metrics"].items())
        r.metrics.emplace_back(metric, v.is_null() ? std::optional<double>()
                                                   : std::optional<double>(v.get<double>()));
      rows.push_back(std::move(r));
    }
    std::vector<std::string> all_names = names;
    for (const auto& [row, delta] : improve.items()) {
      metrics::MetricReport r;
      for (const auto& [metric, _] : rows[0].metrics) {
        if (delta.contains(metric))
          r.metrics.emplace_back(metric, delta[metric].get<double>());
        else
          r.metrics.emplace_back(metric, std::nullopt);
      }
      rows.push_back(std::move(r));
      all_names.push_back(row);
    }
    text = metrics::comparison_table(all_names, rows);
  }
  scope.write_text("report.txt", text);
  return scope.finish();
}

}  // namespace kfwc::runner
