#ifndef HOMLAB_H
#define HOMLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum HomlabStatus {
  HOMLAB_STATUS_OK = 0,
  HOMLAB_STATUS_NULL_POINTER = 1,
  HOMLAB_STATUS_INVALID_ARGUMENT = 2,
  HOMLAB_STATUS_INVALID_MODEL = 3,
  HOMLAB_STATUS_INVALID_GRID = 4,
  HOMLAB_STATUS_NOT_POSITIVE_DEFINITE = 5,
  HOMLAB_STATUS_NON_FINITE = 6,
  HOMLAB_STATUS_NOT_CONVERGED = 7,
  HOMLAB_STATUS_INCONSISTENT = 8,
  HOMLAB_STATUS_BUFFER_TOO_SMALL = 9,
  HOMLAB_STATUS_IO = 10,
  HOMLAB_STATUS_PANIC = 11,
} HomlabStatus;

/**
 * Operator discretization.
 */
typedef enum HomlabScheme {
  HOMLAB_SCHEME_CELL_TENSOR = 0,
  HOMLAB_SCHEME_HARMONIC_FACE = 1,
} HomlabScheme;

/**
 * Opaque coefficient field.
 */
typedef struct HomlabField HomlabField;

/**
 * Opaque corrector solution.
 */
typedef struct HomlabSolution HomlabSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len - 1` bytes). Returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
uintptr_t homlab_last_error(char *buf, uintptr_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *homlab_version(void);

/**
 * 1 if `1/p + 1/q < 2/d` (`strict != 0`) or `<=` otherwise, else 0.
 */
int32_t homlab_check_moment_condition(double p, double q, uintptr_t d, int32_t strict);

/**
 * Builds a field from packed cells: `L^d` records of `d(d+1)/2` values,
 * upper triangle row by row, row-major cell order.
 *
 * # Safety
 * `packed` must point to `len` readable values; `out` must be writable.
 */
enum HomlabStatus homlab_field_new(uintptr_t d,
                                   uintptr_t l,
                                   const double *packed,
                                   uintptr_t len,
                                   struct HomlabField **out);

/**
 * Samples a field from a JSON model description, e.g.
 * `{"kind":"independent_block_log_normal","block_side":2,"log_variance":0.5,"p":4,"q":4}`.
 *
 * # Safety
 * `model_json` must be a NUL-terminated string; `out` must be writable.
 */
enum HomlabStatus homlab_field_sample(const char *model_json,
                                      uintptr_t d,
                                      uintptr_t l,
                                      uint64_t seed,
                                      struct HomlabField **out);

/**
 * # Safety
 * `field` must be null or a handle from this library, not yet freed.
 */
void homlab_field_free(struct HomlabField *field);

/**
 * Number of cells.
 *
 * # Safety
 * `field` must be a live handle; `out` must be writable.
 */
enum HomlabStatus homlab_field_n_cells(const struct HomlabField *field, uintptr_t *out);

/**
 * Writes the packed cells (see [`homlab_field_new`]) into `buf`.
 *
 * # Safety
 * `field` must be a live handle; `buf` must hold `len` values.
 */
enum HomlabStatus homlab_field_cells(const struct HomlabField *field, double *buf, uintptr_t len);

/**
 * Pointwise `mu = |a|` and `lambda = 1/|a^-1|`, one value per cell each.
 *
 * # Safety
 * `field` must be a live handle; `mu` and `lambda` must hold `len` values.
 */
enum HomlabStatus homlab_field_mu_lambda(const struct HomlabField *field,
                                         double *mu,
                                         double *lambda,
                                         uintptr_t len);

/**
 * Solves the corrector and flux-corrector problems at relative tolerance `tol`.
 *
 * # Safety
 * `field` must be a live handle; `out` must be writable.
 */
enum HomlabStatus homlab_solve(const struct HomlabField *field,
                               enum HomlabScheme scheme,
                               double tol,
                               struct HomlabSolution **out);

/**
 * # Safety
 * `sol` must be null or a handle from this library, not yet freed.
 */
void homlab_solution_free(struct HomlabSolution *sol);

/**
 * Homogenized matrix, `d x d` row-major.
 *
 * # Safety
 * `sol` must be a live handle; `buf` must hold `len` values.
 */
enum HomlabStatus homlab_solution_a_hom(const struct HomlabSolution *sol,
                                        double *buf,
                                        uintptr_t len);

/**
 * Corrector `phi_i`, one value per cell.
 *
 * # Safety
 * `sol` must be a live handle; `buf` must hold `len` values.
 */
enum HomlabStatus homlab_solution_phi(const struct HomlabSolution *sol,
                                      uintptr_t i,
                                      double *buf,
                                      uintptr_t len);

/**
 * Flux corrector `sigma_ijk`, one value per cell; skew in `(j, k)`.
 *
 * # Safety
 * `sol` must be a live handle; `buf` must hold `len` values.
 */
enum HomlabStatus homlab_solution_sigma(const struct HomlabSolution *sol,
                                        uintptr_t i,
                                        uintptr_t j,
                                        uintptr_t k,
                                        double *buf,
                                        uintptr_t len);

/**
 * Worst relative residuals over components: corrector solve, `div q`, and the
 * flux-corrector divergence identity.
 *
 * # Safety
 * `sol` must be a live handle; `out` must hold 3 values.
 */
enum HomlabStatus homlab_solution_residuals(const struct HomlabSolution *sol, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOMLAB_H */
