#ifndef MCCHANNEL_H
#define MCCHANNEL_H

#pragma once

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum McStatus {
  MC_STATUS_OK = 0,
  MC_STATUS_NULL_POINTER = 1,
  MC_STATUS_INVALID_PARAMETER = 2,
  MC_STATUS_DOMAIN = 3,
  MC_STATUS_PARSE = 4,
  MC_STATUS_EMPTY_TRACE = 5,
  MC_STATUS_DEGENERATE = 6,
  MC_STATUS_OUT_OF_SPAN = 7,
  MC_STATUS_GRID_MISMATCH = 8,
  MC_STATUS_TOO_FEW_SAMPLES = 9,
  MC_STATUS_NO_CONVERGENCE = 10,
  MC_STATUS_IO = 11,
  MC_STATUS_INVALID_UTF8 = 12,
  MC_STATUS_JSON = 13,
  MC_STATUS_INDEX_OUT_OF_RANGE = 14,
  MC_STATUS_PANIC = 15,
} McStatus;

// Opaque set of concentration profiles from [`mc_simulate_json`].
typedef struct McSimulation McSimulation;

// Opaque sensor trace.
typedef struct McTrace McTrace;

typedef struct McDiffusionParams {
  double molecule_count;
  double diffusion_coefficient;
  uint32_t dimension;
  double distance;
} McDiffusionParams;

// Coefficients of the vertical channel model and the link distance.
typedef struct McVerticalParams {
  double a;
  double b;
  double e;
  double d;
} McVerticalParams;

// Levenberg-Marquardt controls. Fill with [`mc_fit_config_default`].
typedef struct McFitConfig {
  // When false, the starting point is derived from the trace peak.
  bool has_initial_guess;
  double initial_guess[3];
  uint32_t max_iterations;
  double cost_tolerance;
  double step_tolerance;
  double initial_damping;
  double damping_up_factor;
  double damping_down_factor;
  double lower_bounds[3];
} McFitConfig;

typedef struct McFitResult {
  struct McVerticalParams params;
  double residual_sum_of_squares;
  uint32_t iterations;
  bool converged;
} McFitResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *mc_version(void);

// Message for the most recent failure on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *mc_last_error_message(void);

// Frees a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and must not be used afterwards.
void mc_string_free(char *s);

// Pulse response `M / (4 pi D t)^(n/2) exp(-d^2 / (4 D t))`.
//
// # Safety
// `params` must be readable and `out` writable.
enum McStatus mc_diffusion_response(const struct McDiffusionParams *params,
                                    double t,
                                    double *out_value);

// Vertical model `a / sqrt(t) exp(-b d^2 / t) - e t`.
//
// # Safety
// `params` must be readable and `out_value` writable.
enum McStatus mc_vertical_response(const struct McVerticalParams *params,
                                   double t,
                                   double *out_value);

// Partial derivatives of the vertical model with respect to `(a, b, e)`.
//
// # Safety
// `params` must be readable and `out_gradient` must point at 3 writable
// doubles.
enum McStatus mc_vertical_gradient(const struct McVerticalParams *params,
                                   double t,
                                   double (*out_gradient)[3]);

// Time of the vertical model's maximum.
//
// # Safety
// `params` must be readable and `out_time` writable.
enum McStatus mc_peak_time(const struct McVerticalParams *params, double *out_time);

// # Safety
// `out_config` must be writable.
enum McStatus mc_fit_config_default(struct McFitConfig *out_config);

// Builds a trace from parallel arrays of times and values.
//
// # Safety
// `times` and `values` must each point at `len` doubles; `out_trace` must
// be writable.
enum McStatus mc_trace_from_arrays(const double *times,
                                   const double *values,
                                   size_t len,
                                   struct McTrace **out_trace);

// Parses the trace CSV format.
//
// # Safety
// `csv` must be a NUL-terminated string; `out_trace` must be writable.
enum McStatus mc_trace_parse_csv(const char *csv, struct McTrace **out_trace);

// Serializes a trace to the CSV format. Free the result with
// [`mc_string_free`].
//
// # Safety
// `trace` must be a live handle; `out_csv` must be writable.
enum McStatus mc_trace_to_csv(const struct McTrace *trace, char **out_csv);

// Number of samples, or 0 for NULL.
//
// # Safety
// `trace` must be NULL or a live handle.
size_t mc_trace_len(const struct McTrace *trace);

// Reads sample `index`.
//
// # Safety
// `trace` must be a live handle; `out_t` and `out_v` must be writable.
enum McStatus mc_trace_get(const struct McTrace *trace, size_t index, double *out_t, double *out_v);

// Divides a trace by its maximum.
//
// # Safety
// `trace` must be a live handle; `out_trace` must be writable.
enum McStatus mc_trace_normalize(const struct McTrace *trace, struct McTrace **out_trace);

// Keeps samples with `start < t <= end`.
//
// # Safety
// `trace` must be a live handle; `out_trace` must be writable.
enum McStatus mc_trace_window(const struct McTrace *trace,
                              double start,
                              double end,
                              struct McTrace **out_trace);

// Subtracts a constant baseline.
//
// # Safety
// `trace` must be a live handle; `out_trace` must be writable.
enum McStatus mc_trace_subtract_baseline(const struct McTrace *trace,
                                         double baseline,
                                         struct McTrace **out_trace);

// Linear interpolation onto `grid`; no extrapolation.
//
// # Safety
// `trace` must be a live handle, `grid` must point at `len` doubles and
// `out_trace` must be writable.
enum McStatus mc_trace_resample(const struct McTrace *trace,
                                const double *grid,
                                size_t len,
                                struct McTrace **out_trace);

// Pointwise mean of `count` traces sampled on the same grid.
//
// # Safety
// `traces` must point at `count` live handles; `out_trace` must be
// writable.
enum McStatus mc_trace_average(const struct McTrace *const *traces,
                               size_t count,
                               struct McTrace **out_trace);

// Releases a trace. NULL is ignored.
//
// # Safety
// `trace` must come from this library and must not be used afterwards.
void mc_trace_free(struct McTrace *trace);

// Vertical-model samples on `grid` plus seeded Gaussian noise.
//
// # Safety
// `params` must be readable, `grid` must point at `len` doubles and
// `out_trace` must be writable.
enum McStatus mc_synthetic_trace(const struct McVerticalParams *params,
                                 const double *grid,
                                 size_t len,
                                 double noise_sigma,
                                 uint64_t seed,
                                 struct McTrace **out_trace);

// Fits `(a, b, e)` at fixed distance `d`. `config` may be NULL for the
// defaults. A fit that fails to converge still returns `MC_STATUS_OK`
// with `converged = false`.
//
// # Safety
// `trace` must be a live handle, `config` NULL or readable, `out_result`
// writable.
enum McStatus mc_fit_vertical(const struct McTrace *trace,
                              double d,
                              const struct McFitConfig *config,
                              struct McFitResult *out_result);

// Mean coefficients of `count` converged fits sharing one distance.
//
// # Safety
// `results` must point at `count` readable results; `out_params` must be
// writable.
enum McStatus mc_average_fit(const struct McFitResult *results,
                             size_t count,
                             struct McVerticalParams *out_params);

// Runs the particle random walk from a JSON configuration (same schema as
// the `simulate` subcommand).
//
// # Safety
// `config_json` must be a NUL-terminated string; `out_simulation` must be
// writable.
enum McStatus mc_simulate_json(const char *config_json, struct McSimulation **out_simulation);

// Number of snapshots, or 0 for NULL.
//
// # Safety
// `simulation` must be NULL or a live handle.
size_t mc_simulation_snapshot_count(const struct McSimulation *simulation);

// Snapshot `index` as a trace of (bin center, concentration), plus its
// time and out-of-range particle count.
//
// # Safety
// `simulation` must be a live handle; the out-pointers must be writable
// (`out_time` and `out_out_of_range` may be NULL).
enum McStatus mc_simulation_profile(const struct McSimulation *simulation,
                                    size_t index,
                                    double *out_time,
                                    uint64_t *out_out_of_range,
                                    struct McTrace **out_trace);

// Releases a simulation. NULL is ignored.
//
// # Safety
// `simulation` must come from this library and must not be used afterwards.
void mc_simulation_free(struct McSimulation *simulation);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MCCHANNEL_H */
