#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "data.hpp"
#include "metrics.hpp"
#include "model.hpp"

namespace kfwc::train {

struct Hyperparams {
  double base_lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.001;
  int batch_size = 8;
  int epochs_stage1 = 500;
  int epochs_stage2 = 100;
  int lr_decay_period = 20;       // epochs between decays
  double lr_decay_factor = 0.1;   // multiplicative step
  uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static Hyperparams from_json(const nlohmann::json& j);
};

// base_lr * factor^floor(epoch / period)
double lr_at(int epoch, const Hyperparams& h);

// --- checkpoints ----------------------------------------------------------

struct TensorBlob {
  int rows = 0, cols = 0;
  std::vector<float> data;
};

struct Checkpoint {
  std::string stage;  // "signs-F", "signs-O", "diagnosis"
  nlohmann::json trunk;
  int epoch = 0;
  nlohmann::json hyperparams;
  uint64_t seed = 0;
  nlohmann::json metrics;
  int format_version = 1;
  std::map<std::string, TensorBlob> tensors;
};

void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);  // ArtifactError on corrupt/version

Checkpoint checkpoint_from(model::SignModel& m, const std::string& stage, int epoch,
                           const Hyperparams& h, const nlohmann::json& metric_snapshot);
Checkpoint checkpoint_from(model::DiagnosisModel& m, int epoch, const Hyperparams& h,
                           const nlohmann::json& metric_snapshot);
model::SignModel sign_model_from(const Checkpoint& c);        // checks stage tag
model::DiagnosisModel diagnosis_model_from(const Checkpoint& c);

// --- dataset access with a decoded-pixel cache -----------------------------

class LoadedDataset {
 public:
  LoadedDataset(data::DatasetManifest manifest, std::string base_dir);

  const data::DatasetManifest& manifest() const { return manifest_; }
  const std::vector<std::string>& split(const std::string& name) const;
  // Preprocessed tensor for one image record (cached decode).
  Tensor3 tensor(const data::ImageRecord& rec) const;
  // (width, height) of the original (pre-resize) pixels.
  std::pair<int, int> image_size(const data::ImageRecord& rec) const;
  const data::BiModalGroup& group(const std::string& id) const { return *index_.at(id); }

 private:
  data::DatasetManifest manifest_;
  std::string base_dir_;
  std::map<std::string, const data::BiModalGroup*> index_;
  mutable std::map<std::string, ImageU8> cache_;
  mutable std::mutex mu_;
};

LoadedDataset load_dataset(const std::string& dir);  // dir with manifest.json + images/

// --- training loops ---------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_auroc = 0.0;  // macro
  nlohmann::json to_json() const;
};

using LogSink = std::function<void(const EpochLog&)>;

struct TrainOptions {
  int threads = 0;  // 0 = hardware default
  bool freeze_encoders = false;
  bool class_weights = false;
  LogSink sink;
};

struct SignTrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
  double best_val_auroc = 0.0;
};

struct DiagnosisTrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
  double best_val_auroc = 0.0;
};

// Stage 1: multi-label sign pre-training with BCE; best epoch selected by
// validation macro AUROC.
SignTrainResult pretrain_signs(data::Modality branch, const LoadedDataset& ds,
                               const Hyperparams& h, const model::TrunkConfig& trunk,
                               const TrainOptions& opt = {});

// Stage 2: encoders initialized from the two stage-1 checkpoints (verified by
// checksum before the first step), fresh diagnosis head, cross-entropy.
DiagnosisTrainResult finetune_diagnosis(const Checkpoint& ckpt_f, const Checkpoint& ckpt_o,
                                        const LoadedDataset& ds, const Hyperparams& h,
                                        const TrainOptions& opt = {});

// Equal-budget ablation arm: identical schedule with seeded random encoders.
DiagnosisTrainResult train_scratch_baseline(const LoadedDataset& ds, const Hyperparams& h,
                                            const model::TrunkConfig& trunk,
                                            const TrainOptions& opt = {});

// Shared evaluation helpers.
metrics::SignEvalBatch eval_signs(const model::SignModel& m, const LoadedDataset& ds,
                                  const std::string& split, int threads = 0);
metrics::DiagEvalBatch eval_diagnosis(const model::DiagnosisModel& m, const LoadedDataset& ds,
                                      const std::string& split, int threads = 0);

}  // namespace kfwc::train
