#ifndef GDID_H
#define GDID_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes.
 */
typedef enum GdidStatus {
  GDID_STATUS_OK = 0,
  GDID_STATUS_NULL_POINTER = 1,
  GDID_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed data or configuration.
   */
  GDID_STATUS_INVALID_INPUT = 3,
  GDID_STATUS_ESTIMATION_FAILED = 4,
  GDID_STATUS_PANIC = 5,
} GdidStatus;

/**
 * A parsed panel, kept as text plus its column mapping.
 */
typedef struct GdidDataset GdidDataset;

typedef struct GdidResult GdidResult;

/**
 * Headline numbers of an estimate.
 */
typedef struct GdidSummary {
  double tau_hat;
  double se;
  double ci_lower;
  double ci_upper;
  double level;
  uint64_t n;
  uint64_t n_treated;
} GdidSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parses a panel CSV. `schema_json` may be null for the default long layout
 * (`unit,time,outcome,treatment,cov_*`). On success `*out` owns a new handle.
 *
 * # Safety
 * `csv_text` must be a valid NUL-terminated string, `schema_json` null or
 * a valid string, and `out` a valid pointer.
 */
enum GdidStatus gdid_dataset_from_csv(const char *csv_text,
                                      const char *schema_json,
                                      struct GdidDataset **out);

/**
 * Number of units, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a handle from [`gdid_dataset_from_csv`].
 */
uint64_t gdid_dataset_n_units(const struct GdidDataset *ds);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void gdid_dataset_free(struct GdidDataset *ds);

/**
 * Runs an estimate. `config_json` is a JSON run configuration (null for
 * defaults: gDiD with one lag, ensemble learners, plug-in inference); its
 * `schema` field is ignored in favour of the dataset's.
 *
 * # Safety
 * `ds` must be a live dataset handle, `config_json` null or a valid string,
 * and `out` a valid pointer.
 */
enum GdidStatus gdid_estimate(const struct GdidDataset *ds,
                              const char *config_json,
                              struct GdidResult **out);

/**
 * # Safety
 * `res` must be a live result handle and `out` a valid pointer.
 */
enum GdidStatus gdid_result_summary(const struct GdidResult *res, struct GdidSummary *out);

/**
 * Full result as JSON; free with [`gdid_string_free`]. Null on failure.
 *
 * # Safety
 * `res` must be null or a live result handle.
 */
char *gdid_result_json(const struct GdidResult *res);

/**
 * Number of influence entries (units, or clusters for clustered runs).
 *
 * # Safety
 * `res` must be null or a live result handle.
 */
uint64_t gdid_result_influence_len(const struct GdidResult *res);

/**
 * Copies up to `len` influence values into `buf` and returns how many were
 * written.
 *
 * # Safety
 * `res` must be a live result handle and `buf` valid for `len` writes.
 */
uint64_t gdid_result_influence(const struct GdidResult *res, double *buf, uint64_t len);

/**
 * # Safety
 * `res` must be null or a handle not yet freed.
 */
void gdid_result_free(struct GdidResult *res);

/**
 * Message for the last failure on this thread, or null. The pointer stays
 * valid until the next library call on the same thread.
 */
const char *gdid_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void gdid_string_free(char *s);

/**
 * Library version as a static string.
 */
const char *gdid_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GDID_H */
