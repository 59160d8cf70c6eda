/* iopfl: federated segmentation with inside personalization and
 * test-time routing for outside clients. C interface.
 *
 * Every function returns an iopfl_status. On failure the message of the
 * calling thread's last error is available from iopfl_last_error() until the
 * next failing call on that thread. Handles are opaque; free them with the
 * matching *_free function (NULL is accepted). */
#ifndef IOPFL_IOPFL_H
#define IOPFL_IOPFL_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define IOPFL_API __declspec(dllexport)
#else
#define IOPFL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum iopfl_status {
  IOPFL_OK = 0,
  IOPFL_ERR_CONFIG = 1,   /* invalid configuration or argument */
  IOPFL_ERR_SHAPE = 2,    /* tensor or architecture mismatch */
  IOPFL_ERR_NUMERIC = 3,  /* non-finite values during training or adaptation */
  IOPFL_ERR_IO = 4,       /* missing or corrupt files */
  IOPFL_ERR_STATE = 5,    /* API misuse */
  IOPFL_ERR_INTERNAL = 6  /* unexpected failure */
} iopfl_status;

typedef struct iopfl_config iopfl_config;
typedef struct iopfl_model iopfl_model;

IOPFL_API const char* iopfl_version(void);
IOPFL_API const char* iopfl_last_error(void);
IOPFL_API const char* iopfl_status_name(iopfl_status status);
/* Process exit code for a status: 0 success, 2 numerical failure, 1 otherwise. */
IOPFL_API int iopfl_exit_code(iopfl_status status);

/* ---- configuration ---- */
IOPFL_API iopfl_status iopfl_config_default(iopfl_config** out);
IOPFL_API iopfl_status iopfl_config_load(const char* path, iopfl_config** out);
IOPFL_API iopfl_status iopfl_config_parse(const char* json_text, iopfl_config** out);
IOPFL_API void iopfl_config_free(iopfl_config* cfg);
IOPFL_API iopfl_status iopfl_config_set_seed(iopfl_config* cfg, uint64_t master_seed);
IOPFL_API iopfl_status iopfl_config_set_seed_count(iopfl_config* cfg, size_t count);
IOPFL_API iopfl_status iopfl_config_set_output_dir(iopfl_config* cfg, const char* dir);
IOPFL_API iopfl_status iopfl_config_set_threads(iopfl_config* cfg, size_t threads);
/* Applies IOPFL_OUT and IOPFL_THREADS from the environment. */
IOPFL_API iopfl_status iopfl_config_apply_env(iopfl_config* cfg);
IOPFL_API iopfl_status iopfl_config_output_dir(const iopfl_config* cfg, char* buf, size_t cap,
                                               size_t* needed);
/* Resolved config as JSON. Writes at most cap bytes including the NUL;
 * *needed (optional) receives the full size including the NUL. */
IOPFL_API iopfl_status iopfl_config_to_json(const iopfl_config* cfg, char* buf, size_t cap,
                                            size_t* needed);

/* ---- experiment commands (write into out_dir) ---- */
IOPFL_API iopfl_status iopfl_train(const iopfl_config* cfg, const char* out_dir);
/* outside_client may be NULL to use the configured one. */
IOPFL_API iopfl_status iopfl_adapt(const iopfl_config* cfg, const char* checkpoint_dir,
                                   const char* outside_client, const char* out_dir);
/* sweep: "tau", "local_epochs", "members", "d" or "beta". values may be NULL
 * (count 0) to use the configured grid. */
IOPFL_API iopfl_status iopfl_ablate(const iopfl_config* cfg, const char* sweep,
                                    const double* values, size_t count, const char* out_dir);
IOPFL_API iopfl_status iopfl_leave_one_out(const iopfl_config* cfg, const char* out_dir);
IOPFL_API iopfl_status iopfl_report(const char* results_dir, const char* out_dir);

/* ---- models ---- */
IOPFL_API iopfl_status iopfl_model_build(size_t in_channels, size_t classes, size_t base_width,
                                         uint64_t seed, iopfl_model** out);
IOPFL_API iopfl_status iopfl_model_load(const char* prefix, iopfl_model** out);
IOPFL_API iopfl_status iopfl_model_save(const iopfl_model* model, const char* prefix);
IOPFL_API void iopfl_model_free(iopfl_model* model);
IOPFL_API iopfl_status iopfl_model_param_count(const iopfl_model* model, size_t* out);
IOPFL_API iopfl_status iopfl_model_classes(const iopfl_model* model, size_t* out);
/* Eval-mode logits for an NCHW batch; logits holds n*classes*h*w doubles. */
IOPFL_API iopfl_status iopfl_model_forward(const iopfl_model* model, const double* input,
                                           size_t n, size_t c, size_t h, size_t w,
                                           double* logits, size_t logits_len);

/* Dice of label `cls` between two label maps; 1.0 when both are empty. */
IOPFL_API iopfl_status iopfl_dice(const int32_t* pred, const int32_t* gt, size_t len, int32_t cls,
                                  double* out);

#ifdef __cplusplus
}
#endif

#endif /* IOPFL_IOPFL_H */
