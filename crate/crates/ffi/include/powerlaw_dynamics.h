#ifndef POWERLAW_DYNAMICS_H
#define POWERLAW_DYNAMICS_H

#include <stddef.h>
#include <stdint.h>

typedef enum PldStatus {
  PLD_STATUS_OK = 0,
  PLD_STATUS_NULL_POINTER = 1,
  // Bad parameters or configuration.
  PLD_STATUS_INVALID_ARGUMENT = 2,
  // Overflow, all paths censored, singular systems and similar.
  PLD_STATUS_NUMERICAL = 3,
  PLD_STATUS_BUFFER_TOO_SMALL = 4,
  PLD_STATUS_PANIC = 5,
} PldStatus;

typedef enum PldZMethod {
  PLD_Z_METHOD_QUADRATURE = 0,
  PLD_Z_METHOD_CLOSED_FORM = 1,
} PldZMethod;

typedef enum PldCrossing {
  PLD_CROSSING_GRID_ONLY = 0,
  PLD_CROSSING_BROWNIAN_BRIDGE = 1,
} PldCrossing;

// Opaque model handle.
typedef struct PldModel PldModel;

// Opaque batch of recorded paths.
typedef struct PldTrajectories PldTrajectories;

typedef struct PldExitEstimate {
  double mean;
  double ci_low;
  double ci_high;
  uint64_t n_exited;
  uint64_t n_censored;
  // Non-zero when censored paths make `mean` a lower bound.
  int32_t censored_lower_bound;
} PldExitEstimate;

typedef struct PldSimConfig {
  double step;
  double horizon;
  uint64_t n_paths;
  uint64_t base_seed;
  uint64_t record_stride;
} PldSimConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *pld_version(void);

// Message of the last failure on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *pld_last_error(void);

// Model with per-coordinate `h`, `sigma`, `rho` of length `dim`.
//
// # Safety
// Input arrays must hold `dim` values; `out` must be writable.
enum PldStatus pld_model_decoupled_new(const double *h,
                                       const double *sigma,
                                       const double *rho,
                                       size_t dim,
                                       double eta,
                                       struct PldModel **out);

// Model with full matrices. `w_star` may be null (origin).
//
// # Safety
// Matrices must hold `dim * dim` values, `w_star` (if non-null) `dim`.
enum PldStatus pld_model_full_new(const double *hessian,
                                  const double *sigma_g,
                                  const double *sigma_h,
                                  const double *w_star,
                                  size_t dim,
                                  double eta,
                                  struct PldModel **out);

// # Safety
// `model` must come from a `pld_model_*_new` call and not be freed twice.
void pld_model_free(struct PldModel *model);

// # Safety
// `model` must be a live handle or null (returns 0).
size_t pld_model_dim(const struct PldModel *model);

// Tail index of coordinate `coord` of the decoupled form.
//
// # Safety
// `model` must be a live handle; `out` writable.
enum PldStatus pld_model_tail_index(const struct PldModel *model, size_t coord, double *out);

// # Safety
// `model` must be a live handle; outputs writable.
enum PldStatus pld_model_ergodicity(const struct PldModel *model, int32_t *pass, double *threshold);

// Stationary density of coordinate `coord` at `x`.
//
// # Safety
// `model` must be a live handle; `out` writable.
enum PldStatus pld_stationary_density(const struct PldModel *model,
                                      size_t coord,
                                      double x,
                                      double *out);

// # Safety
// `model` must be a live handle; `out` writable.
enum PldStatus pld_normalizing_constant(const struct PldModel *model,
                                        size_t coord,
                                        enum PldZMethod method,
                                        double *out);

// Mean exit time from `(a, b)` by the double-integral formula (1-D).
//
// # Safety
// `model` must be a live handle; `out` writable.
enum PldStatus pld_exit_time_quadrature(const struct PldModel *model,
                                        double a,
                                        double b,
                                        double x0,
                                        double *out);

// Mean exit time from `(a, b)` by the finite-difference boundary-value
// solve on `n_grid` points (1-D).
//
// # Safety
// `model` must be a live handle; `out` writable.
enum PldStatus pld_exit_time_ode(const struct PldModel *model,
                                 double a,
                                 double b,
                                 double x0,
                                 size_t n_grid,
                                 double *out);

// Monte Carlo mean exit time from `(a, b)`. `max_steps = 0` picks the
// default horizon.
//
// # Safety
// `model` must be a live handle; `out` writable.
enum PldStatus pld_exit_time_mc(const struct PldModel *model,
                                double a,
                                double b,
                                double x0,
                                double step,
                                uint64_t n_paths,
                                uint64_t max_steps,
                                uint64_t seed,
                                enum PldCrossing crossing,
                                struct PldExitEstimate *out);

// Euler–Maruyama paths from `x0` (length `dim`).
//
// # Safety
// `model` must be a live handle, `cfg` readable, `x0` hold `dim` values and
// `out` be writable.
enum PldStatus pld_simulate(const struct PldModel *model,
                            const struct PldSimConfig *cfg,
                            const double *x0,
                            struct PldTrajectories **out);

// # Safety
// `t` must come from [`pld_simulate`] and not be freed twice.
void pld_trajectories_free(struct PldTrajectories *t);

// Writes `n_paths`, `n_records` and `dim`.
//
// # Safety
// `t` must be a live handle; outputs writable.
enum PldStatus pld_trajectories_shape(const struct PldTrajectories *t,
                                      size_t *n_paths,
                                      size_t *n_records,
                                      size_t *dim);

// Copies all values, path-major (`[path][record][coord]`), into `buf`.
// Returns `BufferTooSmall` when `len < n_paths * n_records * dim`.
//
// # Safety
// `t` must be a live handle; `buf` must hold `len` values.
enum PldStatus pld_trajectories_copy(const struct PldTrajectories *t, double *buf, size_t len);

// Copies the record times into `buf` (`n_records` values).
//
// # Safety
// `t` must be a live handle; `buf` must hold `len` values.
enum PldStatus pld_trajectories_times(const struct PldTrajectories *t, double *buf, size_t len);

// Runs an experiment config given as a JSON string, writing its artifacts
// under `out_dir` (null keeps `output.directory`).
//
// # Safety
// `config_json` must be a NUL-terminated string; `out_dir` NUL-terminated
// or null.
enum PldStatus pld_run_config(const char *config_json, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POWERLAW_DYNAMICS_H */
