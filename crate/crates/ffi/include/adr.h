#ifndef ADR_H
#define ADR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AdrStatus {
  ADR_STATUS_OK = 0,
  ADR_STATUS_NULL_POINTER = 1,
  ADR_STATUS_INVALID_ARGUMENT = 2,
  ADR_STATUS_SHAPE = 3,
  ADR_STATUS_SINGULAR = 4,
  ADR_STATUS_IO = 5,
  ADR_STATUS_PARSE = 6,
  ADR_STATUS_CONFIG = 7,
  ADR_STATUS_RUNTIME = 8,
  ADR_STATUS_PANIC = 9,
} AdrStatus;

// Encoder memory bank loaded from a checkpoint directory.
typedef struct AdrEncoderBank AdrEncoderBank;

// Dense row-major matrix of `double`.
typedef struct AdrMatrix AdrMatrix;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null if none. The pointer
// stays valid until the next failing call on this thread.
const char *adr_last_error_message(void);

// Library version as a static nul-terminated string.
const char *adr_version(void);

// Copies `rows * cols` row-major values from `data` into a new matrix.
//
// # Safety
// `data` must point to `rows * cols` readable doubles; `out` must be writable.
enum AdrStatus adr_matrix_new(size_t rows, size_t cols, const double *data, struct AdrMatrix **out);

// # Safety
// `m` must be null or a handle from this library that has not been freed.
void adr_matrix_free(struct AdrMatrix *m);

// # Safety
// `m` must be a live matrix handle.
size_t adr_matrix_rows(const struct AdrMatrix *m);

// # Safety
// `m` must be a live matrix handle.
size_t adr_matrix_cols(const struct AdrMatrix *m);

// Copies the row-major values into `out`, which holds `len` doubles.
//
// # Safety
// `m` must be a live handle and `out` must point to `len` writable doubles.
enum AdrStatus adr_matrix_copy_data(const struct AdrMatrix *m, double *out, size_t len);

// Solves `(R + γI) W = Q` for symmetric PSD `R`.
//
// # Safety
// `r` and `q` must be live handles; `out` must be writable.
enum AdrStatus adr_ridge_solve(const struct AdrMatrix *r,
                               const struct AdrMatrix *q,
                               double gamma,
                               struct AdrMatrix **out);

// Loads an encoder bank checkpoint directory together with its recorded γ.
//
// # Safety
// `dir` must be a nul-terminated path; `out` must be writable.
enum AdrStatus adr_encoder_bank_load(const char *dir, struct AdrEncoderBank **out);

// # Safety
// `b` must be null or a live bank handle.
void adr_encoder_bank_free(struct AdrEncoderBank *b);

// # Safety
// `b` must be a live bank handle.
size_t adr_encoder_bank_num_layers(const struct AdrEncoderBank *b);

// # Safety
// `b` must be a live bank handle.
size_t adr_encoder_bank_task_count(const struct AdrEncoderBank *b);

// γ recorded in the checkpoint manifest.
//
// # Safety
// `b` must be a live bank handle.
double adr_encoder_bank_gamma(const struct AdrEncoderBank *b);

// Merged weight of layer `k` under ridge weight `gamma`.
//
// # Safety
// `b` must be a live bank handle; `out` must be writable.
enum AdrStatus adr_encoder_bank_merge_layer(const struct AdrEncoderBank *b,
                                            double gamma,
                                            size_t k,
                                            struct AdrMatrix **out);

// Runs the experiment described by `config_json` and returns its run record
// as a JSON string in `out_json`. No files are written.
//
// # Safety
// `config_json` must be nul-terminated; `out_json` must be writable. The
// returned string must be released with [`adr_string_free`].
enum AdrStatus adr_run_experiment(const char *config_json, char **out_json);

// # Safety
// `s` must be null or a string returned by this library.
void adr_string_free(char *s);

// Average incremental, final and learning accuracy of a lower-triangular
// performance matrix passed as its rows concatenated: row `t` holds `t + 1`
// values, `num_tasks * (num_tasks + 1) / 2` in total.
//
// # Safety
// `packed` must point to that many doubles; the three outputs must be writable.
enum AdrStatus adr_metrics_from_rows(const double *packed,
                                     size_t num_tasks,
                                     double *a_avg,
                                     double *a_f,
                                     double *a_l);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADR_H */
