#ifndef TICKETLAB_H
#define TICKETLAB_H

/* Generated by cbindgen; run `cargo build -p ticketlab-ffi --features ffi-headers` to regenerate. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirroring the CLI exit codes where they overlap.
 */
typedef enum {
  TL_STATUS_OK = 0,
  TL_STATUS_ERR_RUNTIME = 1,
  TL_STATUS_ERR_CONFIG = 2,
  TL_STATUS_ERR_INCOMPLETE = 3,
  TL_STATUS_ERR_NULL_ARG = 4,
  TL_STATUS_ERR_UTF8 = 5,
  TL_STATUS_ERR_BUFFER_TOO_SMALL = 6,
  TL_STATUS_ERR_PANIC = 7,
} TlStatus;

/**
 * Opaque experiment handle.
 */
typedef struct TlExperiment TlExperiment;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message (UTF-8, NUL-terminated, possibly
 * truncated) into `buf` and returns the full message length in bytes.
 * A zero return means no pending error. `buf` may be null to query the
 * needed capacity.
 */
uintptr_t tl_last_error(char *buf, uintptr_t cap);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tl_version(void);

/**
 * Sparsity after `round` rounds of pruning 20% of the survivors.
 */
double tl_schedule_sparsity(uint32_t round);

/**
 * `sgn(x) * max(|x| - lambda, 0)`.
 */
double tl_soft_threshold(double x, double lambda);

/**
 * Elementwise soft threshold; `xs` and `out` hold `n` doubles and may
 * alias exactly (in-place) but must not partially overlap.
 */
TlStatus tl_soft_threshold_buf(const double *xs, uintptr_t n, double lambda, double *out);

/**
 * Squared Fréchet distance between Gaussian fits of two row-major
 * sample buffers (`rows x dim` doubles each).
 */
TlStatus tl_frechet_distance(const double *a,
                             uintptr_t a_rows,
                             const double *b,
                             uintptr_t b_rows,
                             uintptr_t dim,
                             double *out);

/**
 * Draws `n` samples of a built-in dataset (`ring8`, `grid25`, `moons`)
 * into `out`, which must hold `n * 2` doubles. Deterministic in `seed`.
 */
TlStatus tl_dataset_sample(const char *id, uintptr_t n, uint64_t seed, double *out);

/**
 * Opens an experiment from a config file. Returns null on error (see
 * `tl_last_error`). The handle must be freed with `tl_experiment_free`.
 */
TlExperiment *tl_experiment_open(const char *config_path, const char *out_root);

/**
 * Runs (or resumes) the experiment and loads its records. Safe to call
 * again; a completed archive is a no-op reload.
 */
TlStatus tl_experiment_run(TlExperiment *handle, uint32_t workers);

/**
 * Number of records loaded by the last successful run.
 */
uintptr_t tl_experiment_record_count(const TlExperiment *handle);

/**
 * Copies record `index` as NUL-terminated JSON into `buf`. Writes the
 * required capacity (including the terminator) to `needed` when given.
 */
TlStatus tl_experiment_record_json(const TlExperiment *handle,
                                   uintptr_t index,
                                   char *buf,
                                   uintptr_t cap,
                                   uintptr_t *needed);

/**
 * Frees a handle from `tl_experiment_open`. Null is a no-op.
 */
void tl_experiment_free(TlExperiment *handle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TICKETLAB_H */
