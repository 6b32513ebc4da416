/* SPDX-License-Identifier: Apache-2.0 */
#ifndef QCOMM_QCOMM_H
#define QCOMM_QCOMM_H

#include <stddef.h>
#include <stdint.h>

#if defined(QCOMM_BUILDING_LIBRARY)
#define QC_API __attribute__((visibility("default")))
#else
#define QC_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum qc_status {
  QC_OK = 0,
  QC_ERR_INTERNAL = 1,
  QC_ERR_CONFIG = 2,
  QC_ERR_NUMERIC = 3,
  QC_ERR_IO = 4,
  QC_ERR_DIMENSION = 5,
  QC_ERR_CONTRACT = 6,
  QC_ERR_INVALID_ARGUMENT = 7
} qc_status;

typedef enum qc_quantizer_scheme { QC_SCHEME_LEVELS = 0, QC_SCHEME_EXTENDED = 1 } qc_quantizer_scheme;

/* Opaque handles. */
typedef struct qc_config qc_config;
typedef struct qc_result qc_result;

typedef void (*qc_progress_fn)(const char* line, void* user);

QC_API const char* qc_version(void);
/* Message of the last failed call on this thread ("" if none). */
QC_API const char* qc_last_error(void);
QC_API const char* qc_status_name(qc_status status);
/* Frees strings returned through char** out-parameters. */
QC_API void qc_string_free(char* s);

/* Configuration ----------------------------------------------------------- */
QC_API qc_status qc_config_load(const char* path, qc_config** out);
QC_API qc_status qc_config_from_json(const char* json_text, qc_config** out);
QC_API void qc_config_free(qc_config* config);
QC_API qc_status qc_config_set_seeds(qc_config* config, const uint64_t* seeds, size_t count);
QC_API qc_status qc_config_set_output_dir(qc_config* config, const char* dir);
QC_API qc_status qc_config_set_eval_jobs(qc_config* config, size_t jobs);
QC_API qc_status qc_config_set_candidates(qc_config* config, const size_t* counts, size_t count);
/* Switches to the 4 x 10 world and re-derives automatic sizes. */
QC_API qc_status qc_config_set_full_scale(qc_config* config);
QC_API qc_status qc_config_output_dir(const qc_config* config, char** out);
QC_API qc_status qc_config_to_json(const qc_config* config, char** out);

/* Experiments ------------------------------------------------------------- */
QC_API void qc_set_progress(qc_progress_fn fn, void* user);

/* Trains every seed and writes checkpoints and reports under the output dir. */
QC_API qc_status qc_train(const qc_config* config, qc_result** out);
/* Evaluates one checkpoint on the test targets. counts may be NULL (config list).
   When csv_path is non-NULL the long-format table is written there. */
QC_API qc_status qc_evaluate_checkpoint(const qc_config* config, const char* checkpoint, const size_t* counts,
                                        size_t count, const char* csv_path, qc_result** out);
QC_API qc_status qc_sweep(const qc_config* config, size_t jobs, qc_result** out);
/* Writes <dir>/comparison.csv; *out_path receives its path. */
QC_API qc_status qc_report(const char* dir, char** out_path);

/* Results ----------------------------------------------------------------- */
QC_API void qc_result_free(qc_result* result);
QC_API qc_status qc_result_json(const qc_result* result, char** out);
/* Rows of the per-n accuracy table (aggregate for train, single seed for eval). */
QC_API size_t qc_result_rows(const qc_result* result);
/* accuracy and std are NaN for failed rows. */
QC_API qc_status qc_result_row(const qc_result* result, size_t row, size_t* n, double* accuracy, double* std);
/* Returns 1 and writes *noum when the mode is discrete, 0 otherwise. */
QC_API int qc_result_noum(const qc_result* result, double* noum);

/* Channel utilities ------------------------------------------------------- */
/* Quantizes len values already normalized to [0, 1]. Either output may be NULL. */
QC_API qc_status qc_quantize(const double* values, size_t len, size_t alphabet, qc_quantizer_scheme scheme,
                             int32_t* symbols, double* dequantized);
/* Capacity of (alphabet^word_length)^message_length as text, e.g. "1000000" or "10^100". */
QC_API qc_status qc_capacity(size_t alphabet, size_t word_length, size_t message_length, char** out);

#ifdef __cplusplus
}
#endif

#endif /* QCOMM_QCOMM_H */
