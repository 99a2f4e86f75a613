#ifndef VEIL_H
#define VEIL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VeilStatus {
  VEIL_STATUS_OK = 0,
  VEIL_STATUS_NULL_POINTER = 1,
  VEIL_STATUS_INVALID_UTF8 = 2,
  VEIL_STATUS_INVALID_ARGUMENT = 3,
  VEIL_STATUS_CONFIG = 4,
  VEIL_STATUS_NUMERIC = 5,
  VEIL_STATUS_IO = 6,
  /**
   * The simulation already ran its configured number of steps.
   */
  VEIL_STATUS_FINISHED = 7,
  /**
   * A verification ran but the claim was not supported at the requested confidence.
   */
  VEIL_STATUS_VERIFY_FAILED = 8,
  VEIL_STATUS_PANIC = 99,
} VeilStatus;

/**
 * Opaque closed-loop simulation handle.
 */
typedef struct VeilSimulation VeilSimulation;

/**
 * Scalar summary of one control period.
 */
typedef struct VeilStep {
  size_t k;
  double t;
  double mu;
  double mu_max;
  double barrier;
  double h_lower;
  double h_upper;
  double delta_total;
  double tracking_error;
  double rho;
  bool resampled;
  bool certified;
} VeilStep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *veil_last_error_message(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void veil_string_free(char *s);

/**
 * Writes the reference configuration as TOML to `*out`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum VeilStatus veil_config_example(char **out);

/**
 * Creates a simulation from a TOML configuration.
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum VeilStatus veil_simulation_new(const char *config_toml, struct VeilSimulation **out);

/**
 * # Safety
 * `sim` must be null or a handle from [`veil_simulation_new`] not yet freed.
 */
void veil_simulation_free(struct VeilSimulation *sim);

/**
 * Advances one control period. `out` may be null.
 *
 * # Safety
 * `sim` must be a live handle; `out` must be null or valid.
 */
enum VeilStatus veil_simulation_step(struct VeilSimulation *sim, struct VeilStep *out);

/**
 * Like [`veil_simulation_step`] but writes the full trace record as JSON.
 *
 * # Safety
 * `sim` must be a live handle and `out` a valid pointer.
 */
enum VeilStatus veil_simulation_step_json(struct VeilSimulation *sim, char **out);

/**
 * Number of steps taken so far, or 0 for a null handle.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
size_t veil_simulation_step_index(const struct VeilSimulation *sim);

/**
 * Copies the true position into `out[..len]` and writes the dimension to `*dim`.
 * Fails with `InvalidArgument` when `len` is smaller than the dimension.
 *
 * # Safety
 * `sim` must be a live handle, `out` valid for `len` doubles, `dim` valid.
 */
enum VeilStatus veil_simulation_position(const struct VeilSimulation *sim,
                                         double *out,
                                         size_t len,
                                         size_t *dim);

/**
 * Current barrier value.
 *
 * # Safety
 * `sim` must be a live handle and `out` valid.
 */
enum VeilStatus veil_simulation_barrier(const struct VeilSimulation *sim, double *out);

/**
 * Runs a whole simulation and writes its report as JSON.
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum VeilStatus veil_run(const char *config_toml, char **out);

/**
 * Runs one Monte Carlo verification and writes the report as JSON. Returns
 * `VerifyFailed` (with the report still written) when the claim is not
 * supported at the requested confidence.
 *
 * # Safety
 * `claim` must be a NUL-terminated string and `out` a valid pointer.
 */
enum VeilStatus veil_verify(const char *claim,
                            size_t trials,
                            size_t states,
                            double confidence,
                            uint64_t seed,
                            char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VEIL_H */
