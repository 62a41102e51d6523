#ifndef BURGERSLAB_H
#define BURGERSLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum BlStatus {
  BL_STATUS_OK = 0,
  BL_STATUS_NULL_POINTER = 1,
  BL_STATUS_INVALID_ARGUMENT = 2,
  BL_STATUS_CFL_VIOLATION = 3,
  BL_STATUS_NOT_CONVERGED = 4,
  BL_STATUS_IO = 5,
  BL_STATUS_FORMAT = 6,
  BL_STATUS_PANIC = 7,
} BlStatus;

typedef enum BlNorm {
  BL_NORM_L1 = 0,
  BL_NORM_L2 = 1,
  BL_NORM_LINF = 2,
  /**
   * Spectral `H^s`, with `s` passed separately.
   */
  BL_NORM_HS = 3,
} BlNorm;

/**
 * Opaque simulation config.
 */
typedef struct BlConfig BlConfig;

/**
 * Opaque spectral state.
 */
typedef struct BlState BlState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty if none. Valid
 * until the next failing call on the same thread.
 */
const char *bl_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *bl_version(void);

/**
 * Config with forcing profiles on `[1, 2]` of unit amplitude and `h = 0`.
 *
 * # Safety
 * `out` must be null or point to writable storage for a pointer.
 */
enum BlStatus bl_config_new(double nu, size_t n_modes, double dt, struct BlConfig **out);

/**
 * Model keys of a TOML run config; experiment sections are ignored.
 *
 * # Safety
 * `path` must be null or a NUL-terminated string; `out` as in `bl_config_new`.
 */
enum BlStatus bl_config_from_toml(const char *path_ptr, struct BlConfig **out);

/**
 * Replaces the deterministic forcing by `h` (sine coefficients, `len ≤ n_modes`).
 *
 * # Safety
 * `config` must be a live handle; `h` must point to `len` doubles.
 */
enum BlStatus bl_config_set_forcing(struct BlConfig *config, const double *h, size_t len);

/**
 * Number of modes, or 0 for a null handle.
 *
 * # Safety
 * `config` must be null or a live handle.
 */
size_t bl_config_n_modes(const struct BlConfig *config);

/**
 * # Safety
 * `config` must be null or a handle not yet freed.
 */
void bl_config_free(struct BlConfig *config);

/**
 * State from `n` sine coefficients.
 *
 * # Safety
 * `coeffs` must point to `n` doubles; `out` as in `bl_config_new`.
 */
enum BlStatus bl_state_new(const double *coeffs, size_t n, struct BlState **out);

/**
 * # Safety
 * `state` must be null or a live handle.
 */
size_t bl_state_n_modes(const struct BlState *state);

/**
 * Copies the coefficients into `out`, which must hold exactly `n_modes` values.
 *
 * # Safety
 * `state` must be a live handle; `out` must point to `len` writable doubles.
 */
enum BlStatus bl_state_coeffs(const struct BlState *state, double *out, size_t len);

/**
 * Norm of a state; `s` is only read for `BL_NORM_HS`.
 *
 * # Safety
 * `state` must be a live handle; `out` must be writable.
 */
enum BlStatus bl_state_norm(const struct BlState *state, enum BlNorm which, double s, double *out);

/**
 * # Safety
 * `state` must be null or a handle not yet freed.
 */
void bl_state_free(struct BlState *state);

/**
 * State at `t_end` of the stochastic equation driven by the noise of `(seed, member)`.
 *
 * # Safety
 * `config` and `u0` must be live handles; `out` as in `bl_config_new`.
 */
enum BlStatus bl_simulate(const struct BlConfig *config,
                          const struct BlState *u0,
                          double t_end,
                          uint64_t seed,
                          uint64_t member,
                          struct BlState **out);

/**
 * State at `t_end` of the deterministic equation without control.
 *
 * # Safety
 * As for `bl_simulate`.
 */
enum BlStatus bl_simulate_deterministic(const struct BlConfig *config,
                                        const struct BlState *u0,
                                        double t_end,
                                        struct BlState **out);

/**
 * Steady state of the deterministic equation; `residual` may be null.
 *
 * # Safety
 * `config` must be a live handle; `out` as in `bl_config_new`.
 */
enum BlStatus bl_steady_state(const struct BlConfig *config,
                              struct BlState **out,
                              double *residual);

/**
 * Norm of `e^{tνΔ}` from `H^source` to `H^target`.
 *
 * # Safety
 * `out` must be writable.
 */
enum BlStatus bl_heat_operator_norm(double t, double nu, double source, double target, double *out);

/**
 * Writes a state snapshot recording `time`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `state` a live handle.
 */
enum BlStatus bl_snapshot_save(const char *path_ptr, const struct BlState *state, double time);

/**
 * Reads a state snapshot; `time` may be null.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` as in `bl_config_new`.
 */
enum BlStatus bl_snapshot_load(const char *path_ptr, struct BlState **out, double *time);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BURGERSLAB_H */
