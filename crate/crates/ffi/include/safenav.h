#ifndef SAFENAV_H
#define SAFENAV_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SafenavStatus {
  SAFENAV_STATUS_OK = 0,
  SAFENAV_STATUS_NULL_POINTER = 1,
  SAFENAV_STATUS_INVALID_ARGUMENT = 2,
  SAFENAV_STATUS_PARSE = 3,
  SAFENAV_STATUS_IO = 4,
  SAFENAV_STATUS_SIMULATION = 5,
  SAFENAV_STATUS_OUT_OF_RANGE = 6,
  SAFENAV_STATUS_PANIC = 7,
} SafenavStatus;

// The trajectory and report of one finished run.
typedef struct SafenavRun SafenavRun;

// A loaded scenario with any overrides applied.
typedef struct SafenavScenario SafenavScenario;

// One control step of a trajectory.
typedef struct SafenavRecord {
  double t;
  double qx;
  double qy;
  double v;
  double theta;
  double u1;
  double u2;
  double v_star1;
  double v_star2;
  double h;
  double psi0;
  double min_xi;
  double min_phi;
  double omega;
  double lambda;
  bool active;
  uint64_t k;
} SafenavRecord;

// Outcome of a run. `time_to_goal` is NaN when the goal was not reached.
typedef struct SafenavSummary {
  bool reached;
  bool crashed;
  bool audit_passed;
  double time_to_goal;
  double final_time;
  double final_distance;
  double min_h;
  double min_psi0;
  double max_abs_v;
  size_t steps;
  // Same value the command-line tool exits with.
  int32_t exit_code;
} SafenavSummary;

// Filter weights and slopes.
typedef struct SafenavFilterParams {
  double gamma;
  double alpha;
} SafenavFilterParams;

// Closed-form solution of the filter; `v_star` is written separately.
typedef struct SafenavFilterResult {
  double omega;
  double lambda;
  double mu_star;
  bool active;
} SafenavFilterResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. Valid until the
// next call into the library from the same thread.
const char *safenav_last_error(void);

// Opens a scenario file or bundled scenario name.
//
// # Safety
// `reference` must be a NUL-terminated string and `out` a writable pointer.
enum SafenavStatus safenav_scenario_open(const char *reference, struct SafenavScenario **out);

// Applies one `key=value` override, as `--set` does on the command line.
//
// # Safety
// `scenario` must come from `safenav_scenario_open`; `assignment` must be a
// NUL-terminated string.
enum SafenavStatus safenav_scenario_set(struct SafenavScenario *scenario, const char *assignment);

// # Safety
// `scenario` must be NULL or come from `safenav_scenario_open`, and must not
// be used afterwards.
void safenav_scenario_free(struct SafenavScenario *scenario);

// Simulates a scenario to completion. A crash inside the simulation is a
// successful call; inspect the summary.
//
// # Safety
// `scenario` must come from `safenav_scenario_open`; `out` must be writable.
enum SafenavStatus safenav_run(const struct SafenavScenario *scenario, struct SafenavRun **out);

// # Safety
// `run` must be NULL or come from `safenav_run`, and must not be used
// afterwards.
void safenav_run_free(struct SafenavRun *run);

// Number of logged control steps; 0 for a NULL handle.
//
// # Safety
// `run` must be NULL or come from `safenav_run`.
size_t safenav_run_len(const struct SafenavRun *run);

// # Safety
// `run` must come from `safenav_run`; `out` must be writable.
enum SafenavStatus safenav_run_record(const struct SafenavRun *run,
                                      size_t index,
                                      struct SafenavRecord *out);

// # Safety
// `run` must come from `safenav_run`; `out` must be writable.
enum SafenavStatus safenav_run_summary(const struct SafenavRun *run, struct SafenavSummary *out);

// Writes the trajectory CSV, with the same columns as the command-line tool.
//
// # Safety
// `run` must come from `safenav_run`; `path` must be a NUL-terminated string.
enum SafenavStatus safenav_run_write_csv(const struct SafenavRun *run, const char *path);

// Log-sum-exp soft minimum of `n` values.
//
// # Safety
// `z` must point to `n` doubles; `out` must be writable.
enum SafenavStatus safenav_softmin(const double *z, size_t n, double kappa, double *out);

// Log-sum-exp soft maximum of `n` values.
//
// # Safety
// `z` must point to `n` doubles; `out` must be writable.
enum SafenavStatus safenav_softmax(const double *z, size_t n, double kappa, double *out);

// Smooth step of order `r` and rate `nu`: 0 for `t ≤ 0`, 1 for `t ≥ 1/nu`.
double safenav_smoothstep(double t, uint32_t r, double nu);

// Closed-form safety filter for one step. `lg_h`, `v_d` and `v_star` hold
// `m` doubles each.
//
// # Safety
// The array pointers must be valid for `m` doubles; `out` must be writable.
enum SafenavStatus safenav_solve_filter(double h,
                                        double dh_dt,
                                        double lf_h,
                                        const double *lg_h,
                                        const double *v_d,
                                        size_t m,
                                        struct SafenavFilterParams params,
                                        double *v_star,
                                        struct SafenavFilterResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SAFENAV_H */
