#ifndef TOKENPOSE_C_API_H
#define TOKENPOSE_C_API_H

/*
 * C interface to the pose estimation core. All functions return a status
 * code; every other result travels through out-parameters. Strings returned
 * through char** are heap-allocated and must be released with
 * tkp_string_free. Handles are opaque and must be released with their
 * matching *_free call. tkp_last_error() describes the most recent failure
 * on the calling thread.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(__cplusplus)
extern "C" {
#endif

typedef enum tkp_status {
  TKP_OK = 0,
  TKP_ERROR_INVALID_ARGUMENT = 1,
  TKP_ERROR_SHAPE_MISMATCH = 2,
  TKP_ERROR_PARSE = 3,
  TKP_ERROR_IO = 4,
  TKP_ERROR_INCOMPATIBLE_CHECKPOINT = 5,
  TKP_ERROR_RUNTIME = 6
} tkp_status;

typedef struct tkp_config tkp_config; /* full run configuration */
typedef struct tkp_model tkp_model;   /* architecture + weights */

const char* tkp_version(void);
const char* tkp_status_name(tkp_status status);
const char* tkp_last_error(void);
void tkp_string_free(char* s);

/* Configuration: defaults, JSON files/strings, dotted-path overrides. */
tkp_status tkp_config_create(tkp_config** out);
tkp_status tkp_config_load(const char* path, tkp_config** out);
tkp_status tkp_config_parse(const char* json, tkp_config** out);
tkp_status tkp_config_set(tkp_config* cfg, const char* key, const char* value);
tkp_status tkp_config_dump(const tkp_config* cfg, char** out_json);
void tkp_config_free(tkp_config* cfg);

/* Exact count of trainable scalars for the configured architecture. */
tkp_status tkp_count_params(const tkp_config* cfg, uint64_t* out_count);

/* Synthetic dataset generation; returns a JSON summary. */
tkp_status tkp_generate_dataset(const tkp_config* cfg, const char* out_dir,
                                char** out_summary_json);

/* Seeded training run; writes checkpoints and a JSON-lines metric log under
 * out_dir, returns a JSON summary. */
tkp_status tkp_train(const tkp_config* cfg, const char* out_dir, char** out_summary_json);

/* Checkpoint loading and inference-side entry points. */
tkp_status tkp_model_load(const char* checkpoint_path, tkp_model** out);
tkp_status tkp_model_config(const tkp_model* model, char** out_json);
tkp_status tkp_evaluate(tkp_model* model, const char* annotations_path,
                        char** out_metrics_json);
tkp_status tkp_infer(tkp_model* model, const char* annotations_path, char** out_results_json);
tkp_status tkp_export_attention(tkp_model* model, const char* annotations_path,
                                const char* sample_id, const char* out_dir,
                                char** out_manifest_json);
void tkp_model_free(tkp_model* model);

#if defined(__cplusplus)
}
#endif

#endif /* TOKENPOSE_C_API_H */
