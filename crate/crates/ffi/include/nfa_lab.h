#ifndef NFA_LAB_H
#define NFA_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum NfaStatus {
  NFA_STATUS_OK = 0,
  NFA_STATUS_NULL_POINTER = 1,
  NFA_STATUS_INVALID_ARGUMENT = 2,
  NFA_STATUS_SHAPE_ERROR = 3,
  NFA_STATUS_NOT_PSD = 4,
  NFA_STATUS_NUMERIC_FAILURE = 5,
  NFA_STATUS_CONFIG_INVALID = 6,
  NFA_STATUS_DIVERGED = 7,
  NFA_STATUS_IO = 8,
  NFA_STATUS_PANIC = 9,
} NfaStatus;

/**
 * Dense row-major matrix.
 */
typedef struct NfaMatrix NfaMatrix;

/**
 * Seeded random generator.
 */
typedef struct NfaRng NfaRng;

/**
 * Stack of weight matrices.
 */
typedef struct NfaStack NfaStack;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread; empty if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *nfa_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *nfa_version(void);

/**
 * Copies `rows*cols` row-major values from `data` into a new matrix.
 *
 * # Safety
 * `data` must point to `rows*cols` readable doubles; `out` must be writable.
 */
enum NfaStatus nfa_matrix_new(size_t rows, size_t cols, const double *data, struct NfaMatrix **out);

/**
 * # Safety
 * `m` must be a live matrix handle or NULL.
 */
size_t nfa_matrix_rows(const struct NfaMatrix *m);

/**
 * # Safety
 * `m` must be a live matrix handle or NULL.
 */
size_t nfa_matrix_cols(const struct NfaMatrix *m);

/**
 * Copies the entries, row-major, into `buf` of capacity `len`.
 *
 * # Safety
 * `buf` must point to `len` writable doubles.
 */
enum NfaStatus nfa_matrix_copy_data(const struct NfaMatrix *m, double *buf, size_t len);

/**
 * # Safety
 * `m` must be a handle from this library, not yet freed, or NULL.
 */
void nfa_matrix_free(struct NfaMatrix *m);

/**
 * Real power of a symmetric positive semi-definite matrix.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum NfaStatus nfa_matrix_power(const struct NfaMatrix *m, double exponent, struct NfaMatrix **out);

/**
 * Frobenius cosine similarity of two same-shape matrices.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum NfaStatus nfa_cosine_similarity(const struct NfaMatrix *a,
                                     const struct NfaMatrix *b,
                                     double *out);

struct NfaRng *nfa_rng_new(uint64_t seed);

/**
 * # Safety
 * `r` must be a handle from this library, not yet freed, or NULL.
 */
void nfa_rng_free(struct NfaRng *r);

/**
 * Uniform fan-in initialization for widths `d_1..d_{L+1}` (`n_widths = L+1`).
 *
 * # Safety
 * `widths` must point to `n_widths` values; handles must be live.
 */
enum NfaStatus nfa_stack_uniform_init(const size_t *widths,
                                      size_t n_widths,
                                      struct NfaRng *rng,
                                      struct NfaStack **out);

/**
 * Balanced re-initialization of `stack` (the input is left untouched).
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum NfaStatus nfa_stack_force_balanced(const struct NfaStack *stack,
                                        struct NfaRng *rng,
                                        struct NfaStack **out);

/**
 * Number of weight matrices; 0 for NULL.
 *
 * # Safety
 * `stack` must be a live handle or NULL.
 */
size_t nfa_stack_depth(const struct NfaStack *stack);

/**
 * Copy of weight `index` (0-based).
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum NfaStatus nfa_stack_weight(const struct NfaStack *stack, size_t index, struct NfaMatrix **out);

/**
 * AGOP `JᵀJ` of the end-to-end linear map.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum NfaStatus nfa_stack_agop(const struct NfaStack *stack, struct NfaMatrix **out);

/**
 * First-layer Gram matrix `W₁ᵀW₁`.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum NfaStatus nfa_stack_feature_matrix(const struct NfaStack *stack, struct NfaMatrix **out);

/**
 * Largest balancedness defect over adjacent layer pairs.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum NfaStatus nfa_stack_max_defect(const struct NfaStack *stack, double *out);

/**
 * `cos(W₁ᵀW₁, A^{1/L})` and whether the exact-alignment check passes at `tol`.
 *
 * # Safety
 * Handles must be live; out-pointers must be writable.
 */
enum NfaStatus nfa_stack_check_alignment(const struct NfaStack *stack,
                                         double tol,
                                         double *cosine,
                                         bool *satisfied);

/**
 * # Safety
 * `s` must be a handle from this library, not yet freed, or NULL.
 */
void nfa_stack_free(struct NfaStack *s);

/**
 * Runs the experiment described by the JSON config, writes its artifacts and
 * returns the run summary as a JSON string (release with [`nfa_string_free`]).
 * A diverged run still returns `Ok` with `"status": "nan"`.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `summary_json` writable.
 */
enum NfaStatus nfa_run_experiment(const char *config_json, char **summary_json);

/**
 * # Safety
 * `s` must come from this library, not yet freed, or be NULL.
 */
void nfa_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NFA_LAB_H */
