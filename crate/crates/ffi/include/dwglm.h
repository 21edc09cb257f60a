#ifndef DWGLM_H
#define DWGLM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DwglmStatus {
  DWGLM_STATUS_OK = 0,
  DWGLM_STATUS_NULL_POINTER = 1,
  DWGLM_STATUS_INVALID_ARGUMENT = 2,
  DWGLM_STATUS_IO = 3,
  DWGLM_STATUS_PARSE = 4,
  DWGLM_STATUS_CONFIG = 5,
  DWGLM_STATUS_DOMAIN = 6,
  DWGLM_STATUS_NON_CONVERGENCE = 7,
  DWGLM_STATUS_SEPARATION = 8,
  DWGLM_STATUS_EMPTY_GROUP = 9,
  DWGLM_STATUS_ESTIMATION = 10,
  DWGLM_STATUS_BUFFER_TOO_SMALL = 11,
  DWGLM_STATUS_PANIC = 12,
} DwglmStatus;

typedef enum DwglmLink {
  DWGLM_LINK_LOGIT = 0,
  DWGLM_LINK_PROBIT = 1,
  DWGLM_LINK_CLOGLOG = 2,
  DWGLM_LINK_IDENTITY = 3,
} DwglmLink;

typedef enum DwglmMethod {
  DWGLM_METHOD_M0 = 0,
  DWGLM_METHOD_M1 = 1,
  DWGLM_METHOD_M2 = 2,
} DwglmMethod;

/**
 * Opaque dataset handle.
 */
typedef struct DwglmDataset DwglmDataset;

/**
 * Opaque estimate handle.
 */
typedef struct DwglmEstimate DwglmEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *dwglm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dwglm_version(void);

/**
 * Link-scale value `g(p)`. Requires `0 < p < 1`.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `double`.
 */
enum DwglmStatus dwglm_link_g(enum DwglmLink link, double p, double *out);

/**
 * Inverse link `g⁻¹(eta)`.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `double`.
 */
enum DwglmStatus dwglm_link_inverse(enum DwglmLink link, double eta, double *out);

/**
 * Derivative of the inverse link at `eta`.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `double`.
 */
enum DwglmStatus dwglm_link_inverse_derivative(enum DwglmLink link, double eta, double *out);

/**
 * First-stage truth for study 2b. `theta` holds 9 values and `delta` two;
 * a null pointer selects the default values.
 *
 * # Safety
 * Non-null array arguments must be readable for their stated lengths;
 * `out` must point to writable memory for two `double`s.
 */
enum DwglmStatus dwglm_true_psi1(const double *theta, const double *delta, double *out);

/**
 * Reads a CSV described by a JSON analysis configuration. The configured
 * stage models are kept on the handle for [`dwglm_estimate`].
 *
 * # Safety
 * `path` and `config_json` must be NUL-terminated strings; `out` must point
 * to writable memory for one handle pointer.
 */
enum DwglmStatus dwglm_dataset_read_csv(const char *path,
                                        const char *config_json,
                                        struct DwglmDataset **out);

/**
 * Simulates a single-stage study-1 dataset. `scenario` is 1-4 and sets the
 * stored working models.
 *
 * # Safety
 * `out` must point to writable memory for one handle pointer.
 */
enum DwglmStatus dwglm_dataset_simulate_study1(size_t n,
                                               uint8_t scenario,
                                               enum DwglmLink link,
                                               uint64_t seed,
                                               struct DwglmDataset **out);

/**
 * Number of subjects, or 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t dwglm_dataset_n_subjects(const struct DwglmDataset *dataset);

/**
 * Number of stages, or 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t dwglm_dataset_n_stages(const struct DwglmDataset *dataset);

/**
 * # Safety
 * `dataset` must be null or a handle not yet freed.
 */
void dwglm_dataset_free(struct DwglmDataset *dataset);

/**
 * Estimates the regime with the dataset's stored models. `models_json`, if
 * non-null, is a JSON array of stage models that replaces them.
 *
 * # Safety
 * `dataset` must be a live handle; `models_json` null or NUL-terminated;
 * `out` must point to writable memory for one handle pointer.
 */
enum DwglmStatus dwglm_estimate(const struct DwglmDataset *dataset,
                                const char *models_json,
                                enum DwglmMethod method,
                                enum DwglmLink link,
                                size_t replicates,
                                uint64_t seed,
                                struct DwglmEstimate **out);

/**
 * Number of stages, or 0 for a null handle.
 *
 * # Safety
 * `estimate` must be null or a live handle.
 */
size_t dwglm_estimate_n_stages(const struct DwglmEstimate *estimate);

/**
 * Number of blip coefficients at 1-based `stage`, or 0 if out of range.
 *
 * # Safety
 * `estimate` must be null or a live handle.
 */
size_t dwglm_estimate_psi_len(const struct DwglmEstimate *estimate, size_t stage);

/**
 * Copies ψ̂ for 1-based `stage` into `buf`, which holds `len` doubles.
 *
 * # Safety
 * `estimate` must be a live handle and `buf` writable for `len` doubles.
 */
enum DwglmStatus dwglm_estimate_psi(const struct DwglmEstimate *estimate,
                                    size_t stage,
                                    double *buf,
                                    size_t len);

/**
 * The full estimate as JSON. Release with [`dwglm_string_free`].
 *
 * # Safety
 * `estimate` must be a live handle; `out` writable for one pointer.
 */
enum DwglmStatus dwglm_estimate_to_json(const struct DwglmEstimate *estimate, char **out);

/**
 * # Safety
 * `estimate` must be null or a handle not yet freed.
 */
void dwglm_estimate_free(struct DwglmEstimate *estimate);

/**
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void dwglm_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DWGLM_H */
