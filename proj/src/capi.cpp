#include "kfwc/kfwc.h"

#include <cstring>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "explain.hpp"
#include "metrics.hpp"
#include "runner.hpp"
#include "train.hpp"

namespace {

thread_local std::string g_last_error;

int set_error(int code, const std::string& msg) {
  g_last_error = msg;
  return code;
}

template <class Fn>
int guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return KFWC_OK;
  } catch (const kfwc::ConfigError& e) {
    return set_error(KFWC_ERR_CONFIG, e.what());
  } catch (const kfwc::ArtifactError& e) {
    return set_error(KFWC_ERR_MISSING, e.what());
  } catch (const kfwc::NumericError& e) {
    return set_error(KFWC_ERR_NUMERIC, e.what());
  } catch (const kfwc::metrics::UndefinedMetric& e) {
    return set_error(KFWC_ERR_CONFIG, e.what());
  } catch (const std::exception& e) {
    return set_error(KFWC_ERROR, e.what());
  }
}

kfwc::runner::RunConfig load_cfg(const char* config_path, const char* out_dir, int64_t seed) {
  if (!config_path) throw kfwc::ConfigError("config path is null");
  kfwc::runner::Overrides ov;
  if (out_dir) ov.out_dir = out_dir;
  ov.seed = seed;
  return kfwc::runner::with_overrides(kfwc::runner::load_run_config(config_path), ov);
}

kfwc::Tensor3 tensor_from_hwc(const float* hwc) {
  const int n = kfwc::data::kInputSize;
  kfwc::Tensor3 t(3, n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      for (int c = 0; c < 3; ++c)
        t.at(c, y, x) = hwc[(static_cast<size_t>(y) * n + x) * 3 + c];
  return t;
}

}  // namespace

struct kfwc_model {
  std::string stage;
  kfwc::train::Checkpoint checkpoint;
  // exactly one of these is populated, by stage
  std::unique_ptr<kfwc::model::SignModel> signs;
  std::unique_ptr<kfwc::model::DiagnosisModel> diagnosis;
};

extern "C" {

const char* kfwc_version(void) { return kfwc::runner::kToolVersion; }

const char* kfwc_last_error(void) { return g_last_error.c_str(); }

int kfwc_gen_data(const char* config_path, const char* out_dir, int64_t seed) {
  return guarded([&] { kfwc::runner::phase_gen_data(load_cfg(config_path, out_dir, seed)); });
}

int kfwc_pretrain(const char* config_path, const char* branch, const char* out_dir,
                  int64_t seed) {
  return guarded([&] {
    if (!branch || (std::strcmp(branch, "F") != 0 && std::strcmp(branch, "O") != 0))
      throw kfwc::ConfigError("branch must be \"F\" or \"O\"");
    kfwc::runner::phase_pretrain(load_cfg(config_path, out_dir, seed),
                                 std::strcmp(branch, "F") == 0 ? kfwc::data::Modality::Fundus
                                                               : kfwc::data::Modality::OCT);
  });
}

int kfwc_train(const char* config_path, const char* ckpt_f, const char* ckpt_o,
               const char* out_dir, int64_t seed) {
  return guarded([&] {
    if (!ckpt_f || !ckpt_o) throw kfwc::ConfigError("train needs both stage-1 checkpoints");
    kfwc::runner::phase_train(load_cfg(config_path, out_dir, seed), ckpt_f, ckpt_o);
  });
}

int kfwc_ablate(const char* config_path, const char* out_dir, int64_t seed) {
  return guarded([&] { kfwc::runner::phase_ablate(load_cfg(config_path, out_dir, seed)); });
}

int kfwc_evaluate(const char* config_path, const char* checkpoint, const char* out_dir,
                  int64_t seed) {
  return guarded([&] {
    if (!checkpoint) throw kfwc::ConfigError("evaluate needs a checkpoint path");
    kfwc::runner::phase_evaluate(load_cfg(config_path, out_dir, seed), checkpoint);
  });
}

int kfwc_explain(const char* config_path, const char* checkpoint, const char* sample_ids,
                 const char* out_dir, int64_t seed) {
  return guarded([&] {
    if (!checkpoint) throw kfwc::ConfigError("explain needs a checkpoint path");
    std::vector<std::string> ids;
    if (sample_ids && *sample_ids) {
      std::stringstream ss(sample_ids);
      std::string id;
      while (std::getline(ss, id, ','))
        if (!id.empty()) ids.push_back(id);
    }
    kfwc::runner::phase_explain(load_cfg(config_path, out_dir, seed), checkpoint, ids);
  });
}

int kfwc_report(const char* const* run_dirs, size_t n_dirs, const char* out_dir) {
  return guarded([&] {
    if (!run_dirs || n_dirs == 0) throw kfwc::ConfigError("report needs run directories");
    if (!out_dir) throw kfwc::ConfigError("report needs an output directory");
    std::vector<std::string> dirs(run_dirs, run_dirs + n_dirs);
    kfwc::runner::phase_report(dirs, out_dir);
  });
}

int kfwc_model_open(const char* checkpoint_path, kfwc_model** out_model) {
  return guarded([&] {
    if (!checkpoint_path || !out_model) throw kfwc::ConfigError("null argument");
    auto ckpt = kfwc::train::load_checkpoint(checkpoint_path);
    auto m = std::make_unique<kfwc_model>();
    m->stage = ckpt.stage;
    if (ckpt.stage == "diagnosis") {
      m->diagnosis = std::make_unique<kfwc::model::DiagnosisModel>(
          kfwc::train::diagnosis_model_from(ckpt));
    } else {
      m->signs =
          std::make_unique<kfwc::model::SignModel>(kfwc::train::sign_model_from(ckpt));
    }
    m->checkpoint = std::move(ckpt);
    *out_model = m.release();
  });
}

void kfwc_model_close(kfwc_model* m) { delete m; }

int kfwc_model_stage(const kfwc_model* m, char* buf, size_t buf_size) {
  return guarded([&] {
    if (!m || !buf) throw kfwc::ConfigError("null argument");
    if (m->stage.size() + 1 > buf_size) throw kfwc::ConfigError("stage buffer too small");
    std::memcpy(buf, m->stage.c_str(), m->stage.size() + 1);
  });
}

int kfwc_model_diagnose(kfwc_model* m, const float* fundus, const float* oct_image,
                        float scores[3], int32_t* predicted) {
  return guarded([&] {
    if (!m || !fundus || !oct_image || !scores) throw kfwc::ConfigError("null argument");
    if (!m->diagnosis) throw kfwc::ConfigError("model stage '" + m->stage +
                                               "' cannot diagnose; load a diagnosis checkpoint");
    const auto s =
        m->diagnosis->scores(tensor_from_hwc(fundus), tensor_from_hwc(oct_image));
    for (int i = 0; i < 3; ++i) scores[i] = s[i];
    if (predicted) *predicted = static_cast<int32_t>(kfwc::model::predict_diagnosis(s));
  });
}

int kfwc_model_sign_probs(kfwc_model* m, int branch, const float* image, float probs[5]) {
  return guarded([&] {
    if (!m || !image || !probs) throw kfwc::ConfigError("null argument");
    if (branch != 0 && branch != 1) throw kfwc::ConfigError("branch must be 0 (F) or 1 (O)");
    const kfwc::Tensor3 t = tensor_from_hwc(image);
    kfwc::model::Encoder::Ctx ctx;
    kfwc::nn::Vec<float> p;
    if (m->diagnosis) {
      const auto& enc = branch == 0 ? m->diagnosis->enc_f : m->diagnosis->enc_o;
      const auto& head = branch == 0 ? m->diagnosis->sign_head_f : m->diagnosis->sign_head_o;
      p = kfwc::model::sign_scores(head, enc.encode(t, ctx));
    } else {
      const bool is_f = m->stage == "signs-F";
      if ((branch == 0) != is_f)
        throw kfwc::ConfigError("this checkpoint holds the " +
                                std::string(is_f ? "F" : "O") + " branch only");
      p = kfwc::model::sign_scores(m->signs->head, m->signs->enc.encode(t, ctx));
    }
    for (int i = 0; i < 5; ++i) probs[i] = p[i];
  });
}

int kfwc_model_gradcam(kfwc_model* m, const float* fundus, const float* oct_image,
                       int class_id, int branch, float* map, size_t map_capacity,
                       int32_t* map_h, int32_t* map_w) {
  return guarded([&] {
    if (!m || !fundus || !oct_image || !map_h || !map_w)
      throw kfwc::ConfigError("null argument");
    if (!m->diagnosis) throw kfwc::ConfigError("gradcam needs a diagnosis checkpoint");
    if (branch != 0 && branch != 1) throw kfwc::ConfigError("branch must be 0 (F) or 1 (O)");
    auto [map_f, map_o] = kfwc::explain::gradcam(*m->diagnosis, tensor_from_hwc(fundus),
                                                 tensor_from_hwc(oct_image), class_id);
    const auto& hm = branch == 0 ? map_f : map_o;
    *map_h = hm.h;
    *map_w = hm.w;
    if (map) {
      if (map_capacity < hm.grid.size())
        throw kfwc::ConfigError("gradcam map buffer too small");
      std::memcpy(map, hm.grid.data(), hm.grid.size() * sizeof(float));
    }
  });
}

int kfwc_metric_auroc(const double* scores, const int32_t* labels, size_t n, double* out) {
  return guarded([&] {
    if (!scores || !labels || !out) throw kfwc::ConfigError("null argument");
    std::vector<double> s(scores, scores + n);
    std::vector<int> l(labels, labels + n);
    *out = kfwc::metrics::auroc_binary(s, l);
  });
}

int kfwc_metric_kappa(const int32_t* pred, const int32_t* truth, size_t n, int32_t n_classes,
                      double* out) {
  return guarded([&] {
    if (!pred || !truth || !out) throw kfwc::ConfigError("null argument");
    std::vector<int> p(pred, pred + n);
    std::vector<int> t(truth, truth + n);
    *out = kfwc::metrics::cohens_kappa(p, t, n_classes);
  });
}

}  // extern "C"
