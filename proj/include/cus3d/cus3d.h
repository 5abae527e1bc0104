/* cus3d C API. Handles are opaque; every call returns a status code and, on
 * failure, leaves a message in cus3d_last_error() for the calling thread.
 * Strings returned through char** are owned by the caller and released with
 * cus3d_string_free. */
#ifndef CUS3D_H
#define CUS3D_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(CUS3D_BUILDING_LIBRARY)
#    define CUS3D_API __declspec(dllexport)
#  else
#    define CUS3D_API __declspec(dllimport)
#  endif
#else
#  define CUS3D_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cus3d_status {
  CUS3D_OK = 0,
  CUS3D_INVALID_ARGUMENT = 1,
  CUS3D_IO = 2,
  CUS3D_FORMAT = 3,
  CUS3D_VALIDATION = 4,
  CUS3D_NUMERIC = 5,
  CUS3D_INTERNAL = 6
} cus3d_status;

typedef struct cus3d_bundle cus3d_bundle;
typedef struct cus3d_point_field cus3d_point_field;
typedef struct cus3d_model cus3d_model;

CUS3D_API const char* cus3d_version(void);
CUS3D_API const char* cus3d_last_error(void);
/* Field name attached to the last error, "" when none. */
CUS3D_API const char* cus3d_last_error_field(void);
CUS3D_API const char* cus3d_status_name(cus3d_status status);
CUS3D_API void cus3d_string_free(char* s);

/* ---- synthetic scenes ---- */

typedef struct cus3d_synth_config {
  uint32_t categories;
  uint32_t dim;
  uint32_t objects;
  uint32_t points_per_object;
  uint32_t frames;
  int32_t width;
  int32_t height;
  double p2d;
  double p3d;
  double sigma;
  uint32_t masks_per_object;
  int cluster_offsets; /* nonzero: emit offsets instead of cluster ids */
  double arena;
  uint64_t seed;
} cus3d_synth_config;

CUS3D_API void cus3d_synth_config_default(cus3d_synth_config* cfg);
/* Newline-separated warnings for a valid config (empty string when none). */
CUS3D_API cus3d_status cus3d_synth_warnings(const cus3d_synth_config* cfg, char** text);
/* gen_scene followed by noise injection at cfg->p2d / cfg->p3d. */
CUS3D_API cus3d_status cus3d_synthesize(const cus3d_synth_config* cfg, cus3d_bundle** out);

typedef struct cus3d_noise_config {
  double p2d;
  double p3d;
  double sigma;
  double beta;
  double eps_depth;
  uint64_t seed;
} cus3d_noise_config;

CUS3D_API void cus3d_noise_config_default(cus3d_noise_config* cfg);
CUS3D_API cus3d_status cus3d_inject_noise(const cus3d_bundle* in, const cus3d_noise_config* cfg, cus3d_bundle** out);

/* ---- bundles ---- */

CUS3D_API cus3d_status cus3d_bundle_load(const char* dir, cus3d_bundle** out);
CUS3D_API cus3d_status cus3d_bundle_save(const cus3d_bundle* bundle, const char* dir);
/* JSON array of {"field","message"} objects; "[]" for a valid bundle. */
CUS3D_API cus3d_status cus3d_bundle_validate(const cus3d_bundle* bundle, char** json);
CUS3D_API void cus3d_bundle_free(cus3d_bundle* bundle);
CUS3D_API size_t cus3d_bundle_point_count(const cus3d_bundle* bundle);
CUS3D_API size_t cus3d_bundle_frame_count(const cus3d_bundle* bundle);
CUS3D_API size_t cus3d_bundle_category_count(const cus3d_bundle* bundle);
CUS3D_API size_t cus3d_bundle_dim(const cus3d_bundle* bundle);
CUS3D_API int cus3d_bundle_has_gt(const cus3d_bundle* bundle);
/* Borrowed pointer, valid while the bundle lives. */
CUS3D_API const char* cus3d_bundle_category_name(const cus3d_bundle* bundle, size_t index);
/* Index of a category name, or -1. */
CUS3D_API int32_t cus3d_bundle_category_index(const cus3d_bundle* bundle, const char* name);
/* Copies C*d floats into out. */
CUS3D_API cus3d_status cus3d_bundle_text(const cus3d_bundle* bundle, float* out, size_t capacity);
/* 1 when both bundles hold bitwise-identical tensors and metadata. */
CUS3D_API int cus3d_bundle_equal(const cus3d_bundle* a, const cus3d_bundle* b);

/* ---- object-level denoising projection ---- */

typedef struct cus3d_odp_options {
  double beta;
  double eps_depth;
  double radius;
  int filter_2d;
  int filter_3d;
  uint32_t frame_stride;
  int32_t threads;
} cus3d_odp_options;

CUS3D_API void cus3d_odp_options_default(cus3d_odp_options* opts);
CUS3D_API cus3d_status cus3d_project(const cus3d_bundle* bundle, const cus3d_odp_options* opts,
                                     cus3d_point_field** out);
/* Writes the per-point raw (unfiltered) projected features to dir. */
CUS3D_API cus3d_status cus3d_dump_raw(const cus3d_bundle* bundle, const cus3d_odp_options* opts, const char* dir);

CUS3D_API cus3d_status cus3d_point_field_save(const cus3d_point_field* field, const char* dir);
CUS3D_API cus3d_status cus3d_point_field_load(const char* dir, cus3d_point_field** out);
CUS3D_API void cus3d_point_field_free(cus3d_point_field* field);
CUS3D_API size_t cus3d_point_field_size(const cus3d_point_field* field);
CUS3D_API size_t cus3d_point_field_dim(const cus3d_point_field* field);
CUS3D_API size_t cus3d_point_field_valid_count(const cus3d_point_field* field);
/* Copies n labels (-1 for invalid points). */
CUS3D_API cus3d_status cus3d_point_field_labels(const cus3d_point_field* field, int32_t* out, size_t capacity);
/* Copies n*d features. */
CUS3D_API cus3d_status cus3d_point_field_features(const cus3d_point_field* field, float* out, size_t capacity);
CUS3D_API int cus3d_point_field_equal(const cus3d_point_field* a, const cus3d_point_field* b);

/* ---- distillation ---- */

#define CUS3D_MAX_ENCODER_LAYERS 8

typedef struct cus3d_student_config {
  uint32_t encoder_widths[CUS3D_MAX_ENCODER_LAYERS];
  uint32_t encoder_layers;
  uint32_t head_width;
  const char* activation; /* "relu", "tanh" or "identity" */
  double lr0;
  double momentum;
  uint32_t epochs;
  uint32_t batch_size;
  double lambda_feature;
  double lambda_label;
  double tau;
  uint64_t seed;
  int unseen_excluded_from_feature_loss;
} cus3d_student_config;

CUS3D_API void cus3d_student_config_default(cus3d_student_config* cfg);
/* unseen: category indices withheld from supervision (may be NULL). */
CUS3D_API cus3d_status cus3d_distill(const cus3d_bundle* bundle, const cus3d_point_field* teacher,
                                     const cus3d_student_config* cfg, const int32_t* unseen, size_t unseen_count,
                                     cus3d_model** out);
CUS3D_API cus3d_status cus3d_model_save(const cus3d_model* model, const char* dir);
CUS3D_API cus3d_status cus3d_model_load(const char* dir, cus3d_model** out);
CUS3D_API void cus3d_model_free(cus3d_model* model);
CUS3D_API cus3d_status cus3d_model_predict(const cus3d_model* model, const cus3d_bundle* bundle,
                                           cus3d_point_field** out);
/* CSV with one row per epoch; empty body for a loaded model. */
CUS3D_API cus3d_status cus3d_model_loss_curve_csv(const cus3d_model* model, char** csv);
CUS3D_API int cus3d_model_equal(const cus3d_model* a, const cus3d_model* b);

/* ---- evaluation and queries ---- */

/* Classifies the field, scores it against the bundle's gt and returns the
 * report as JSON. unseen adds the seen/unseen split and hIoU. Either metric
 * pointer may be NULL. */
CUS3D_API cus3d_status cus3d_evaluate(const cus3d_bundle* bundle, const cus3d_point_field* field,
                                      const int32_t* unseen, size_t unseen_count, char** json, double* miou,
                                      double* acc);
CUS3D_API cus3d_status cus3d_hiou(double miou_seen, double miou_unseen, double* out);
/* out receives n similarities, NaN for invalid points. */
CUS3D_API cus3d_status cus3d_query_similarity(const cus3d_point_field* field, const float* query, size_t dim,
                                              float* out, size_t capacity);

/* ---- filter ablation ---- */

typedef struct cus3d_ablation_config {
  cus3d_synth_config synth;
  const uint64_t* seeds;
  size_t seed_count;
  cus3d_odp_options odp;
  int student_axis;
  cus3d_student_config student;
} cus3d_ablation_config;

CUS3D_API cus3d_status cus3d_ablate(const cus3d_ablation_config* cfg, char** csv, char** json);

#ifdef __cplusplus
}
#endif

#endif
