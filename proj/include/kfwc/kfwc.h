/* KFWC C API: knowledge-driven two-stage bi-modal retinal classification.
 *
 * All functions return a kfwc_status; on failure kfwc_last_error() carries a
 * human-readable message (thread-local). Paths accept UTF-8. Image buffers
 * are 224*224*3 floats in [0,1], HWC row-major, RGB channel order.
 */
#ifndef KFWC_H
#define KFWC_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define KFWC_API __declspec(dllexport)
#else
#define KFWC_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum kfwc_status {
  KFWC_OK = 0,
  KFWC_ERROR = 1,            /* unexpected failure */
  KFWC_ERR_CONFIG = 2,       /* invalid configuration or arguments */
  KFWC_ERR_MISSING = 3,      /* missing or corrupt artifact (dataset, checkpoint) */
  KFWC_ERR_NUMERIC = 4       /* non-finite values during compute */
} kfwc_status;

KFWC_API const char* kfwc_version(void);
KFWC_API const char* kfwc_last_error(void);

/* --- experiment phases ---------------------------------------------------
 * config_path names a JSON run config (see README for the schema).
 * out_dir, when non-NULL, overrides the config's out_dir; seed >= 0
 * overrides the config's seed. Artifacts and a run_manifest.json are
 * written under the output directory.
 */
KFWC_API int kfwc_gen_data(const char* config_path, const char* out_dir, int64_t seed);
KFWC_API int kfwc_pretrain(const char* config_path, const char* branch /* "F" or "O" */,
                           const char* out_dir, int64_t seed);
KFWC_API int kfwc_train(const char* config_path, const char* ckpt_f, const char* ckpt_o,
                        const char* out_dir, int64_t seed);
KFWC_API int kfwc_ablate(const char* config_path, const char* out_dir, int64_t seed);
KFWC_API int kfwc_evaluate(const char* config_path, const char* checkpoint,
                           const char* out_dir, int64_t seed);
/* sample_ids: comma-separated group ids, or NULL/"" for the whole test split */
KFWC_API int kfwc_explain(const char* config_path, const char* checkpoint,
                          const char* sample_ids, const char* out_dir, int64_t seed);
KFWC_API int kfwc_report(const char* const* run_dirs, size_t n_dirs, const char* out_dir);

/* --- model handles -------------------------------------------------------- */

typedef struct kfwc_model kfwc_model;

KFWC_API int kfwc_model_open(const char* checkpoint_path, kfwc_model** out_model);
KFWC_API void kfwc_model_close(kfwc_model* m);
/* Stage tag ("signs-F", "signs-O", "diagnosis") into buf. */
KFWC_API int kfwc_model_stage(const kfwc_model* m, char* buf, size_t buf_size);
/* Raw class scores (length 3) and the argmax class. Diagnosis models only. */
KFWC_API int kfwc_model_diagnose(kfwc_model* m, const float* fundus, const float* oct_image,
                                 float scores[3], int32_t* predicted);
/* Per-sign probabilities (length 5) for one branch: 0 = fundus, 1 = OCT. */
KFWC_API int kfwc_model_sign_probs(kfwc_model* m, int branch, const float* image,
                                   float probs[5]);
/* Grad-CAM map of class class_id for one branch. Callers query the map size
 * with map == NULL; *map_h/*map_w always receive the dimensions. */
KFWC_API int kfwc_model_gradcam(kfwc_model* m, const float* fundus, const float* oct_image,
                                int class_id, int branch, float* map, size_t map_capacity,
                                int32_t* map_h, int32_t* map_w);

/* --- metric helpers -------------------------------------------------------- */

/* AUROC with tie handling (Mann-Whitney); labels in {0,1}. */
KFWC_API int kfwc_metric_auroc(const double* scores, const int32_t* labels, size_t n,
                               double* out);
/* Cohen's kappa over labels in [0, n_classes). */
KFWC_API int kfwc_metric_kappa(const int32_t* pred, const int32_t* truth, size_t n,
                               int32_t n_classes, double* out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* KFWC_H */
