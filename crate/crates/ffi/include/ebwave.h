#ifndef EBWAVE_H
#define EBWAVE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum EbwStatus {
  EBW_STATUS_OK = 0,
  EBW_STATUS_NULL_POINTER = 1,
  EBW_STATUS_INVALID_ARGUMENT = 2,
  EBW_STATUS_DOMAIN_ERROR = 3,
  EBW_STATUS_LOW_DENSITY = 4,
  EBW_STATUS_SINGULAR_SYSTEM = 5,
  EBW_STATUS_NUMERICAL_FAILURE = 6,
  EBW_STATUS_IO_ERROR = 7,
  EBW_STATUS_PANIC = 8,
} EbwStatus;

// Tabulated scaling function.
typedef struct EbwBasis EbwBasis;

// Conditional family with its declared parameter ranges.
typedef struct EbwFamily EbwFamily;

// Family plus prior; gives the exact Bayes rule.
typedef struct EbwPosterior EbwPosterior;

// Estimate at one point with its diagnostics.
typedef struct EbwEstimate {
  double t_hat;
  int32_t m;
  uintptr_t size;
  double delta;
  double min_eigenvalue;
  uintptr_t samples_near;
  bool low_density;
} EbwEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or NULL. The
// pointer stays valid until the next failing call on the same thread.
const char *ebw_last_error(void);

// Library version as a static NUL-terminated string.
const char *ebw_version(void);

// Builds a basis, e.g. `("db8", 12)`.
//
// # Safety
// `name` must be a NUL-terminated string and `out` a valid pointer.
enum EbwStatus ebw_basis_new(const char *name, uint32_t depth, struct EbwBasis **out);

// # Safety
// `basis` must come from [`ebw_basis_new`] (or be NULL) and not be used afterwards.
void ebw_basis_free(struct EbwBasis *basis);

// `φ^(order)(x)` for `order` in 0..=2.
//
// # Safety
// `basis` and `out` must be valid pointers.
enum EbwStatus ebw_basis_eval(const struct EbwBasis *basis, double x, uint32_t order, double *out);

// Parses a family from JSON such as `{"family": "normal", "sigma": 1}`.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum EbwStatus ebw_family_from_json(const char *json, struct EbwFamily **out);

// # Safety
// `family` must come from [`ebw_family_from_json`] (or be NULL) and not be used afterwards.
void ebw_family_free(struct EbwFamily *family);

// Estimate at a fixed level `m` with ridge `δ = delta_mult·2^{m/2} n^{-1/2}`.
//
// # Safety
// `data` must point to `len` doubles; the handles and `out` must be valid.
enum EbwStatus ebw_estimate(const struct EbwFamily *family,
                            const struct EbwBasis *basis,
                            const double *data,
                            uintptr_t len,
                            double y,
                            int32_t m,
                            double delta_mult,
                            struct EbwEstimate *out);

// Estimate at the Lepski-selected level (calibrated threshold times
// `lambda_mult`, levels `1..=⌊log₂ n⌋ − 1`).
//
// # Safety
// `data` must point to `len` doubles; the handles and `out` must be valid.
enum EbwStatus ebw_estimate_auto(const struct EbwFamily *family,
                                 const struct EbwBasis *basis,
                                 const double *data,
                                 uintptr_t len,
                                 double y,
                                 double lambda_mult,
                                 struct EbwEstimate *out);

// Builds a family/prior pair from two JSON documents.
//
// # Safety
// Both strings must be NUL-terminated and `out` a valid pointer.
enum EbwStatus ebw_posterior_from_json(const char *family_json,
                                       const char *prior_json,
                                       struct EbwPosterior **out);

// # Safety
// `post` must come from [`ebw_posterior_from_json`] (or be NULL) and not be used afterwards.
void ebw_posterior_free(struct EbwPosterior *post);

// Exact posterior mean `t(y)`.
//
// # Safety
// `post` and `out` must be valid pointers.
enum EbwStatus ebw_bayes_t(const struct EbwPosterior *post, double y, double *out);

// Marginal density `p(y)`.
//
// # Safety
// `post` and `out` must be valid pointers.
enum EbwStatus ebw_marginal(const struct EbwPosterior *post, double y, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EBWAVE_H */
