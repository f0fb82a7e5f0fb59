#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "synth.hpp"
#include "train.hpp"

namespace kfwc::runner {

inline constexpr const char* kToolVersion = "0.1.0";

// One experiment configuration. Parsed from a JSON file; unknown keys are
// rejected so typos fail fast.
struct RunConfig {
  std::optional<std::string> dataset_path;
  std::optional<data::SyntheticSpec> synthetic;
  std::string trunk = "small";
  train::Hyperparams hp;
  std::string out_dir;
  uint64_t seed = 1;
  bool freeze_encoders = false;
  bool class_weights = false;
  double overlay_alpha = 0.5;
  int threads = 0;

  nlohmann::json to_json() const;
  std::string config_hash() const;
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

// Applied CLI overrides: empty/negative = keep the config value.
struct Overrides {
  std::string out_dir;
  int64_t seed = -1;
};
RunConfig with_overrides(RunConfig cfg, const Overrides& ov);

// Every phase writes its artifacts plus a run_manifest.json under the run's
// output directory and returns the manifest.
struct RunManifest {
  std::string command;
  std::string config_hash;
  std::string tool_version = kToolVersion;
  uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> input_checkpoints;  // path, hash
  std::vector<std::string> artifacts;  // paths relative to the run dir
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
};

RunManifest phase_gen_data(const RunConfig& cfg);
RunManifest phase_pretrain(const RunConfig& cfg, data::Modality branch);
RunManifest phase_train(const RunConfig& cfg, const std::string& ckpt_f_path,
                        const std::string& ckpt_o_path);
RunManifest phase_ablate(const RunConfig& cfg);
RunManifest phase_evaluate(const RunConfig& cfg, const std::string& ckpt_path);
RunManifest phase_explain(const RunConfig& cfg, const std::string& ckpt_path,
                          const std::vector<std::string>& sample_ids);
RunManifest phase_report(const std::vector<std::string>& run_dirs, const std::string& out_dir);

}  // namespace kfwc::runner
