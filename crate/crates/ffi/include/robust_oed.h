#ifndef ROBUST_OED_H
#define ROBUST_OED_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OedStatus {
  OED_STATUS_OK = 0,
  /**
   * Null pointer, zero length, or a value outside its domain.
   */
  OED_STATUS_INVALID_ARGUMENT = 1,
  OED_STATUS_INVALID_CONFIG = 2,
  /**
   * Rank loss, resonance, or too little data.
   */
  OED_STATUS_ILL_POSED = 3,
  OED_STATUS_COMBINATORIAL_GUARD = 4,
  OED_STATUS_IO = 5,
  OED_STATUS_PANIC = 6,
} OedStatus;

typedef struct OedCriterion OedCriterion;

typedef struct OedDesign OedDesign;

typedef struct OedFrf OedFrf;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message on this thread into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length, or 0
 * when there is no error.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t oed_last_error_message(char *buf, size_t len);

/**
 * Wraps a row-major `n_sensors x n_params` matrix.
 *
 * # Safety
 * `data` must point to `n_sensors * n_params` doubles; `out` must be valid.
 */
enum OedStatus oed_frf_new(const double *data,
                           size_t n_sensors,
                           size_t n_params,
                           struct OedFrf **out);

/**
 * Assembles the built-in tiered tower and extracts its FRF.
 *
 * # Safety
 * `out` must be valid.
 */
enum OedStatus oed_frf_demo(struct OedFrf **out);

/**
 * # Safety
 * `frf` must be a live handle or null.
 */
size_t oed_frf_n_sensors(const struct OedFrf *frf);

/**
 * # Safety
 * `frf` must be a live handle or null.
 */
size_t oed_frf_n_params(const struct OedFrf *frf);

/**
 * # Safety
 * `frf` must come from this library and not be used afterwards.
 */
void oed_frf_free(struct OedFrf *frf);

/**
 * # Safety
 * `out` must be valid.
 */
enum OedStatus oed_criterion_classical(double sigma, struct OedCriterion **out);

/**
 * Failure-probability criterion; `survival[i]` is the probability that
 * sensor `i` keeps working.
 *
 * # Safety
 * `survival` must point to `n` doubles; `out` must be valid.
 */
enum OedStatus oed_criterion_pof(const double *survival,
                                 size_t n,
                                 double sigma,
                                 struct OedCriterion **out);

/**
 * Average over the `n_sensors` single-sensor failures.
 *
 * # Safety
 * `out` must be valid.
 */
enum OedStatus oed_criterion_one_out(size_t n_sensors, double sigma, struct OedCriterion **out);

/**
 * # Safety
 * `c` must come from this library and not be used afterwards.
 */
void oed_criterion_free(struct OedCriterion *c);

/**
 * `costs` may be null for unit costs.
 *
 * # Safety
 * `weights` (and `costs` when non-null) must point to `n` doubles.
 */
enum OedStatus oed_design_new(const double *weights,
                              const double *costs,
                              size_t n,
                              double budget,
                              struct OedDesign **out);

/**
 * # Safety
 * `d` must be a live handle or null.
 */
size_t oed_design_len(const struct OedDesign *d);

/**
 * Copies the weights into `buf`, which must hold exactly the design length.
 *
 * # Safety
 * `buf` must point to `len` writable doubles.
 */
enum OedStatus oed_design_weights(const struct OedDesign *d, double *buf, size_t len);

/**
 * # Safety
 * `d` must come from this library and not be used afterwards.
 */
void oed_design_free(struct OedDesign *d);

/**
 * # Safety
 * Handles must be live; `value` must be valid.
 */
enum OedStatus oed_evaluate(const struct OedFrf *frf,
                            const struct OedCriterion *criterion,
                            const struct OedDesign *design,
                            double *value);

/**
 * # Safety
 * Handles must be live; `grad` must point to `len` doubles, with `len`
 * equal to the number of sensors.
 */
enum OedStatus oed_gradient(const struct OedFrf *frf,
                            const struct OedCriterion *criterion,
                            const struct OedDesign *design,
                            double *grad,
                            size_t len);

/**
 * Euclidean projection of `v` onto the box and budget; writes into `out`.
 *
 * # Safety
 * `v`, `costs`, `out` must each point to `n` doubles; `costs` may be null
 * for unit costs.
 */
enum OedStatus oed_project(const double *v,
                           const double *costs,
                           size_t n,
                           double budget,
                           double *out);

/**
 * Relaxed optimum at penalty `gamma` from `design0`, with default solver
 * settings except `max_iters` (0 keeps the default).
 *
 * # Safety
 * Handles must be live; `out` must be valid.
 */
enum OedStatus oed_solve_relaxed(const struct OedFrf *frf,
                                 const struct OedCriterion *criterion,
                                 const struct OedDesign *design0,
                                 double gamma,
                                 size_t max_iters,
                                 struct OedDesign **out);

/**
 * Binary design from a log-spaced penalty sweep. `fallback` (optional)
 * is set when no grid point was binary and the design is a rounding.
 *
 * # Safety
 * Handles must be live; `out` must be valid; `fallback` may be null.
 */
enum OedStatus oed_gamma_sweep(const struct OedFrf *frf,
                               const struct OedCriterion *criterion,
                               const struct OedDesign *design0,
                               double gamma_min,
                               double gamma_max,
                               size_t count,
                               struct OedDesign **out,
                               bool *fallback);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROBUST_OED_H */
