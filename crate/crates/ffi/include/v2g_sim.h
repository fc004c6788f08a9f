#ifndef V2G_SIM_H
#define V2G_SIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Problem selector for [`v2g_env_new`].
#define V2G_PROBLEM_FROM_CONFIG -1

#define V2G_PROBLEM_PST 0

#define V2G_PROBLEM_PROFIT 1

typedef enum V2gStatus {
  V2G_STATUS_OK = 0,
  V2G_STATUS_NULL_POINTER = 1,
  V2G_STATUS_INVALID_ARGUMENT = 2,
  V2G_STATUS_CONFIG_ERROR = 3,
  V2G_STATUS_IO_ERROR = 4,
  V2G_STATUS_SHAPE_MISMATCH = 5,
  V2G_STATUS_EPISODE_DONE = 6,
  V2G_STATUS_UNSUPPORTED = 7,
  V2G_STATUS_INTERNAL = 8,
} V2gStatus;

// Opaque environment handle.
typedef struct V2gEnv V2gEnv;

// Summary of the last step. `p_set_kw` is NaN when there is no setpoint.
typedef struct V2gStepInfo {
  uint64_t step;
  double p_total_kw;
  double p_set_kw;
  double cashflow_eur;
  double overload_kwh;
  uint64_t departures;
  uint64_t arrivals;
} V2gStepInfo;

// Episode metrics; fields without a value (no setpoint, no departures) are NaN.
typedef struct V2gMetrics {
  double energy_charged_kwh;
  double energy_discharged_kwh;
  double user_satisfaction;
  double profits_eur;
  double transformer_overload_kwh;
  double tracking_performance_kwh;
  double squared_tracking_error;
  double capacity_loss;
  double calendar_loss;
  double cyclic_loss;
  double transformer_undershoot_kwh;
  double episode_reward;
  uint64_t sessions;
  uint64_t controller_fallbacks;
} V2gMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Creates an environment from a TOML config file. `problem` is one of the
// `V2G_PROBLEM_*` values; `seed` replaces the config's seed.
//
// # Safety
// `config_path` must be a NUL-terminated string and `out` a valid pointer.
enum V2gStatus v2g_env_new(const char *config_path,
                           int32_t problem,
                           uint64_t seed,
                           struct V2gEnv **out);

// Releases a handle. Passing null is allowed.
//
// # Safety
// `env` must come from [`v2g_env_new`] and not be used afterwards.
void v2g_env_close(struct V2gEnv *env);

// # Safety
// `env` must be a live handle; `obs_len` and `action_len` valid pointers.
enum V2gStatus v2g_env_sizes(const struct V2gEnv *env, size_t *obs_len, size_t *action_len);

// Bounds shared by every action component.
//
// # Safety
// `env` must be a live handle; `low` and `high` valid pointers.
enum V2gStatus v2g_env_action_bounds(const struct V2gEnv *env, double *low, double *high);

// Starts a new episode and writes the first observation.
//
// # Safety
// `obs` must point to `obs_len` writable doubles.
enum V2gStatus v2g_env_reset(struct V2gEnv *env, uint64_t seed, double *obs, size_t obs_len);

// Advances one step. `info` may be null.
//
// # Safety
// `action` must point to `action_len` doubles, `obs` to `obs_len` writable
// doubles, `reward` and `done` must be valid pointers.
enum V2gStatus v2g_env_step(struct V2gEnv *env,
                            const double *action,
                            size_t action_len,
                            double *obs,
                            size_t obs_len,
                            double *reward,
                            bool *done,
                            struct V2gStepInfo *info);

// Action a named causal baseline (`afap`, `alap`, `rr`, `mpc`, `mpc:<h>`)
// would take now. Each baseline keeps its state on the handle until reset.
//
// # Safety
// `name` must be NUL-terminated; `action` must point to `action_len` doubles.
enum V2gStatus v2g_env_baseline_action(struct V2gEnv *env,
                                       const char *name,
                                       double *action,
                                       size_t action_len);

// Metrics over the steps taken so far.
//
// # Safety
// `env` must be a live handle and `out` a valid pointer.
enum V2gStatus v2g_env_metrics(const struct V2gEnv *env, struct V2gMetrics *out);

// Writes the replay of the current episode as JSON.
//
// # Safety
// `env` must be a live handle; `path` NUL-terminated.
enum V2gStatus v2g_env_save_replay(const struct V2gEnv *env, const char *path);

// Copies the calling thread's last error message, NUL-terminated and
// truncated to `len`. Returns the full message length without the NUL.
//
// # Safety
// `buf` must point to `len` writable bytes, or be null when `len` is 0.
size_t v2g_last_error_message(char *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* V2G_SIM_H */
