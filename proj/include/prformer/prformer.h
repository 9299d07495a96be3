/* SPDX-License-Identifier: Apache-2.0 */
/*
 * C interface to the forecaster. Every call returns a prf_status; on failure
 * prf_last_error() describes the problem for the calling thread. Handles are
 * opaque and released with the matching *_free function. Strings returned
 * through char** are released with prf_string_free.
 */
#ifndef PRFORMER_H
#define PRFORMER_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define PRF_API __declspec(dllexport)
#else
#define PRF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum prf_status {
  PRF_OK = 0,
  PRF_ERR_USAGE = 1,   /* bad arguments, configuration or shapes */
  PRF_ERR_DATA = 2,    /* unreadable or insufficient data, bad checkpoint */
  PRF_ERR_NUMERIC = 3, /* divergence or other numeric failure */
  PRF_ERR_INTERNAL = 4
} prf_status;

typedef struct prf_config prf_config;
typedef struct prf_dataset prf_dataset;
typedef struct prf_model prf_model;

PRF_API const char* prf_last_error(void);
PRF_API const char* prf_version(void);
PRF_API void prf_string_free(char* s);

/* Configuration. Defaults come first, then PRFORMER_SEED (if set) for the
 * seed, then anything merged on top. */
PRF_API prf_status prf_config_create(prf_config** out);
PRF_API prf_status prf_config_load_json_file(const char* path, prf_config** out);
/* Applies a JSON object of RunConfig fields; unknown keys are a usage error. */
PRF_API prf_status prf_config_merge_json(prf_config* config, const char* json_text);
PRF_API prf_status prf_config_to_json(const prf_config* config, char** out_json);
PRF_API prf_status prf_config_validate(const prf_config* config);
PRF_API void prf_config_free(prf_config* config);

/* Datasets. The first CSV column is a timestamp, the rest are channels. */
PRF_API prf_status prf_dataset_load_csv(const char* path, size_t max_rows, prf_dataset** out);
/* Three coupled periodic channels (periods 24 and 96) plus Gaussian noise. */
PRF_API prf_status prf_dataset_synthetic(size_t rows, double noise, uint64_t seed, prf_dataset** out);
PRF_API prf_status prf_dataset_shape(const prf_dataset* data, size_t* rows, size_t* channels);
PRF_API prf_status prf_dataset_write_csv(const prf_dataset* data, const char* path);
PRF_API void prf_dataset_free(prf_dataset* data);

/* Models. */
PRF_API prf_status prf_model_create(const prf_config* config, size_t channels, prf_model** out);
PRF_API prf_status prf_model_load(const char* checkpoint_path, prf_model** out);
PRF_API prf_status prf_model_save(const prf_model* model, const char* checkpoint_path);
PRF_API prf_status prf_model_param_count(const prf_model* model, size_t* out);
PRF_API prf_status prf_model_config_json(const prf_model* model, char** out_json);
/* Pyramid configuration warnings, newline separated; empty when none. */
PRF_API prf_status prf_model_warnings(const prf_model* model, char** out_text);
/* inputs: batch x lookback x channels, row-major. outputs: batch x pred_len x channels. */
PRF_API prf_status prf_model_forecast(const prf_model* model, const double* inputs, size_t batch, double* outputs);
PRF_API void prf_model_free(prf_model* model);

typedef struct prf_epoch_record {
  size_t epoch;
  double lr;
  double train_mae;
  double val_mae;
  double val_mse;
  double seconds;
} prf_epoch_record;

typedef void (*prf_epoch_callback)(const prf_epoch_record* record, void* user);

typedef struct prf_train_summary {
  double best_val_mae;
  size_t best_epoch;
  size_t epochs_run;
  int stopped_early;
  double first_epoch_train_mae;
} prf_train_summary;

/* Trains in place and leaves the best-validation parameters in the model.
 * history_csv, checkpoint_path, callback and summary may be NULL. */
PRF_API prf_status prf_train(prf_model* model, const prf_dataset* data, const char* history_csv,
                             const char* checkpoint_path, prf_epoch_callback callback, void* user,
                             prf_train_summary* summary);

typedef enum prf_split { PRF_SPLIT_TRAIN = 0, PRF_SPLIT_VAL = 1, PRF_SPLIT_TEST = 2 } prf_split;

typedef enum prf_forecaster {
  PRF_FORECASTER_MODEL = 0,
  PRF_FORECASTER_PERSISTENCE = 1, /* repeat the last observed value */
  PRF_FORECASTER_LINEAR = 2       /* per-channel least squares on the window, fitted on train */
} prf_forecaster;

typedef struct prf_metrics {
  double mse;
  double mae;
  size_t windows;
} prf_metrics;

/* Windows, lookback and horizon follow the model's configuration. */
PRF_API prf_status prf_evaluate(const prf_model* model, const prf_dataset* data, prf_split split,
                                prf_forecaster forecaster, prf_metrics* out);
/* CSV columns window_start,horizon_step,channel,y_true,y_pred. */
PRF_API prf_status prf_predict(const prf_model* model, const prf_dataset* data, prf_split split,
                               const char* csv_path, size_t* rows_written);
/* CSV columns run_id,window,variable,e0..e{D-1}. max_windows = 0 exports all. */
PRF_API prf_status prf_export_embeddings(const prf_model* model, const prf_dataset* data, prf_split split,
                                         const char* run_id, size_t max_windows, const char* csv_path,
                                         size_t* rows_written);

typedef struct prf_pe_report {
  size_t trials;
  double max_dev;
  size_t worst_d_model;
  double worst_t;
  double worst_s;
  double worst_dt;
} prf_pe_report;

/* d_model = 0 draws an even d_model per trial. */
PRF_API prf_status prf_check_pe(size_t trials, size_t d_model, uint64_t seed, prf_pe_report* out);
/* out receives dot_t, dot_s, cos_sum, max_dev. */
PRF_API prf_status prf_pe_dot(size_t d_model, double t, double s, double dt, double out[4]);

typedef struct prf_bench_options {
  const size_t* lookbacks; /* sweep L at the config's d_model */
  size_t n_lookbacks;
  const size_t* d_models; /* sweep D at the config's lookback, used when n_lookbacks == 0 */
  size_t n_d_models;
  const char* component; /* "pre", "encoder" or "model"; NULL means "pre" */
  size_t channels;
  size_t repetitions;
  size_t warmup;
  int backward;
} prf_bench_options;

typedef struct prf_bench_row {
  size_t lookback;
  size_t d_model;
  double median_seconds;
  double mean_seconds;
  double ratio;
  uint64_t flops;
} prf_bench_row;

/* Writes up to `capacity` rows into `rows` and the total into *n_rows.
 * csv_path may be NULL. */
PRF_API prf_status prf_scaling_bench(const prf_config* config, const prf_bench_options* options,
                                     const char* csv_path, prf_bench_row* rows, size_t capacity, size_t* n_rows);

#ifdef __cplusplus
}
#endif

#endif /* PRFORMER_H */
