#ifndef QUADLEARN_H
#define QUADLEARN_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of entries in a parameter vector.
 */
#define QL_PARAM_COUNT 52

typedef enum QlStatus {
  QL_STATUS_OK = 0,
  QL_STATUS_NULL_POINTER = 1,
  QL_STATUS_INVALID_ARGUMENT = 2,
  QL_STATUS_NUMERICAL = 3,
  QL_STATUS_CONFIG = 4,
  QL_STATUS_IO = 5,
  QL_STATUS_PANIC = 6,
} QlStatus;

/**
 * Recursive least-squares filter handle.
 */
typedef struct QlRls QlRls;

/**
 * Simulated vehicle handle.
 */
typedef struct QlSim QlSim;

typedef struct QlGains {
  double d[3];
  double a[3];
  double v[3];
  double p[3];
} QlGains;

typedef struct QlBodyState {
  /**
   * Inertial, z down, m.
   */
  double position[3];
  double velocity[3];
  /**
   * w, x, y, z
   */
  double attitude[4];
  /**
   * Body rates, rad/s.
   */
  double omega[3];
  double rotor_speeds[4];
} QlBodyState;

/**
 * Outcome of one simulated throw. Times that were never reached are NaN.
 */
typedef struct QlEpisodeSummary {
  bool success;
  bool gyro_saturated;
  /**
   * True when the identifier produced a parameter set.
   */
  bool has_fit;
  /**
   * Bit i set when motor i+1's excitation was aborted.
   */
  uint8_t aborted_motors;
  uint64_t degraded_ticks;
  double switchover_time;
  double recovery_time;
  double rate_tracking_time;
  double max_tilt_after_2s;
  double min_altitude;
  double final_position_error;
  /**
   * Fitted parameters, NaN without a fit. Layout: 13 rows of 4 motors.
   */
  double fitted[QL_PARAM_COUNT];
  double truth[QL_PARAM_COUNT];
} QlEpisodeSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message of this thread into `buf` as a
 * NUL-terminated string, truncated to `len - 1` bytes. Returns the full
 * message length in bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t ql_last_error_message(char *buf, size_t len);

/**
 * ESC input that yields normalized thrust `u` for shape parameter `kappa`.
 */
double ql_esc_invert(double u, double kappa);

/**
 * Cascade gains for actuator time constant `tau` (s) and damping ratios
 * `zetas` = (rate, attitude, velocity, position).
 *
 * # Safety
 * `zetas` must point to 4 doubles and `out` to a writable `QlGains`.
 */
enum QlStatus ql_tune_gains(double tau, const double *zetas, struct QlGains *out);

/**
 * Create an `n`-parameter filter with initial covariance `p0` and
 * forgetting factor `lambda` in (0, 1].
 *
 * # Safety
 * `out` must point to writable storage for one handle pointer.
 */
enum QlStatus ql_rls_new(size_t n, double p0, double lambda, struct QlRls **out);

/**
 * One update with regressor `x` (length `n`) and measurement `y`. The
 * a-priori innovation is written to `innovation` when it is not null.
 *
 * # Safety
 * `h` must come from [`ql_rls_new`]; `x` must point to `n` doubles.
 */
enum QlStatus ql_rls_update(struct QlRls *h,
                            const double *x,
                            size_t n,
                            double y,
                            double *innovation);

/**
 * Copy the current estimate into `out` (length `n`, the filter size).
 *
 * # Safety
 * `h` must come from [`ql_rls_new`]; `out` must point to `n` doubles.
 */
enum QlStatus ql_rls_theta(const struct QlRls *h, double *out, size_t n);

/**
 * # Safety
 * `h` must be null or come from [`ql_rls_new`], and not be used again.
 */
void ql_rls_free(struct QlRls *h);

/**
 * Draw a random vehicle from the default ranges and place it at rest,
 * level, rotors at idle.
 *
 * # Safety
 * `out` must point to writable storage for one handle pointer.
 */
enum QlStatus ql_sim_new(uint64_t seed, struct QlSim **out);

/**
 * Replace the state with a vertical throw to `height` (m) with initial
 * body rate `omega0` (3 doubles, rad/s). The attitude is drawn from
 * `seed`.
 *
 * # Safety
 * `h` must come from [`ql_sim_new`]; `omega0` must point to 3 doubles.
 */
enum QlStatus ql_sim_throw(struct QlSim *h, double height, const double *omega0, uint64_t seed);

/**
 * Advance by `dt` seconds holding the four ESC inputs `esc` constant.
 *
 * # Safety
 * `h` must come from [`ql_sim_new`]; `esc` must point to 4 doubles.
 */
enum QlStatus ql_sim_step(struct QlSim *h, const double *esc, double dt);

/**
 * # Safety
 * `h` must come from [`ql_sim_new`]; `out` must be writable.
 */
enum QlStatus ql_sim_state(const struct QlSim *h, struct QlBodyState *out);

/**
 * # Safety
 * `h` must be null or come from [`ql_sim_new`], and not be used again.
 */
void ql_sim_free(struct QlSim *h);

/**
 * Run one episode. `config_toml` may be null for the defaults; otherwise
 * it is a NUL-terminated TOML document in the same format as the CLI's
 * `--config` file. No tick log is written.
 *
 * # Safety
 * `config_toml` must be null or a valid C string; `out` must be writable.
 */
enum QlStatus ql_run_episode(const char *config_toml, uint64_t seed, struct QlEpisodeSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QUADLEARN_H */
