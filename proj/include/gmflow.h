/*
 * gmflow.h — C interface to the guided probability-flow laboratory.
 *
 * All functions return gmf_status; on any non-GMF_OK return the thread-local
 * message from gmf_last_error() describes the failure. Out-parameters are
 * only written on GMF_OK. Objects created here are released with the matching
 * *_release function; strings returned through char** out-parameters are
 * released with gmf_string_free.
 *
 * Handles are immutable after creation except gmf_field_set_grid, so sharing
 * a mixture/schedule/field across threads for read-only calls is safe.
 */

#ifndef GMFLOW_H
#define GMFLOW_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(GMFLOW_BUILD_SHARED)
#    define GMF_API __declspec(dllexport)
#  else
#    define GMF_API __declspec(dllimport)
#  endif
#else
#  define GMF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gmf_status {
    GMF_OK = 0,
    GMF_ERR_INVALID_ARGUMENT = 1, /* bad parameter or handle */
    GMF_ERR_DOMAIN = 2,           /* time outside [t_min, 1 - t_min] */
    GMF_ERR_PARSE = 3,            /* malformed JSON or unknown key/name */
    GMF_ERR_CONSTRUCTION = 4,     /* a required mathematical object vanished */
    GMF_ERR_DIVERGENCE = 5,       /* an integration left the finite guard */
    GMF_ERR_IO = 6,               /* file system failure */
    GMF_ERR_INTERNAL = 7          /* unexpected condition */
} gmf_status;

/* Library semantic version, e.g. "0.1.0". Static storage; do not free. */
GMF_API const char* gmf_version(void);

/* Message of this thread's most recent failure (empty if none). Static
 * thread-local storage; valid until the next failing call on this thread. */
GMF_API const char* gmf_last_error(void);

/* Stable name of a status code, e.g. "invalid_argument". Do not free. */
GMF_API const char* gmf_status_name(gmf_status status);

typedef struct gmf_mixture gmf_mixture;
typedef struct gmf_schedule gmf_schedule;
typedef struct gmf_field gmf_field;
typedef struct gmf_trajectory gmf_trajectory;

GMF_API void gmf_string_free(char* text);

/* --- Gaussian mixtures --------------------------------------------------- */

/* means is row-major [n_components x dim]. Weights must be nonnegative and
 * sum to 1 within 1e-12; sigma must be positive. */
GMF_API gmf_status gmf_mixture_create(const double* weights,
                                      size_t n_components, const double* means,
                                      size_t dim, double sigma,
                                      gmf_mixture** out);
/* {"weights":[...], "means":[[...],...], "sigma": s}; unknown keys rejected */
GMF_API gmf_status gmf_mixture_from_json(const char* json_text,
                                         gmf_mixture** out);
GMF_API gmf_status gmf_mixture_to_json(const gmf_mixture* mix, char** out_text);
GMF_API gmf_status gmf_mixture_dim(const gmf_mixture* mix, size_t* out);
GMF_API gmf_status gmf_mixture_num_components(const gmf_mixture* mix,
                                              size_t* out);
GMF_API void gmf_mixture_release(gmf_mixture* mix);

/* Closed-form quantities of the noised mixture at time t (all with the
 * default time clamp t_min = 1e-3). x has the mixture's dimension. */
GMF_API gmf_status gmf_marginal_log_density(const gmf_mixture* mix, double t,
                                            const double* x, size_t dim,
                                            double* out);
/* out has n_components entries summing to 1. */
GMF_API gmf_status gmf_responsibilities(const gmf_mixture* mix, double t,
                                        const double* x, size_t dim,
                                        double* out);
GMF_API gmf_status gmf_score_conditional(const gmf_mixture* mix, double t,
                                         const double* x, size_t dim,
                                         double* out);
/* Score of the standard-normal reference flow (mixture-independent). */
GMF_API gmf_status gmf_score_unconditional(double t, const double* x,
                                           size_t dim, double* out);
/* Conditional posterior mean of the clean signal given x at time t. */
GMF_API gmf_status gmf_posterior_mean(const gmf_mixture* mix, double t,
                                      const double* x, size_t dim, double* out);

/* --- Guidance schedules --------------------------------------------------- */

/* {"kind":"constant","omega":w} | {"kind":"two_phase",...} |
 * {"kind":"interval",...} | {"kind":"tv",...} | {"kind":"piecewise",...} */
GMF_API gmf_status gmf_schedule_from_json(const char* json_text,
                                          gmf_schedule** out);
GMF_API gmf_status gmf_schedule_to_json(const gmf_schedule* sched,
                                        char** out_text);
/* Short human-readable identifier, e.g. "tv(omega=9,s=8)". */
GMF_API gmf_status gmf_schedule_describe(const gmf_schedule* sched,
                                         char** out_text);
GMF_API void gmf_schedule_release(gmf_schedule* sched);

/* --- Velocity fields ------------------------------------------------------ */

GMF_API gmf_status gmf_field_unconditional(const gmf_mixture* mix,
                                           gmf_field** out);
GMF_API gmf_status gmf_field_conditional(const gmf_mixture* mix,
                                         gmf_field** out);
GMF_API gmf_status gmf_field_guided(const gmf_mixture* mix,
                                    const gmf_schedule* sched, gmf_field** out);

/* Resolve the field's schedule on a uniform n-step grid from t_start down to
 * t_end (normalizing schedules that require it). Needed before
 * gmf_field_velocity_at_step; may be called again with a new grid. */
GMF_API gmf_status gmf_field_set_grid(gmf_field* field, double t_start,
                                      double t_end, size_t n);

/* v(t, x) for fields with a single guidance scale (unconditional,
 * conditional, or guided by a constant schedule). */
GMF_API gmf_status gmf_field_velocity(const gmf_field* field, double t,
                                      const double* x, size_t dim, double* out);

/* v at the start time of grid step `step`, using that step's resolved
 * guidance scale. Requires a prior gmf_field_set_grid. */
GMF_API gmf_status gmf_field_velocity_at_step(const gmf_field* field,
                                              size_t step, const double* x,
                                              size_t dim, double* out);
GMF_API void gmf_field_release(gmf_field* field);

/* --- ODE integration ------------------------------------------------------ */

/* Integrate dx/dt = v(t, x) from (t_start, x0) down to t_end with n_steps
 * uniform steps of the given method ("euler", "heun", or "rk4"), recording
 * every record_every steps (0 = endpoints only). A trajectory that leaves the
 * finite guard is returned with its diverged flag set, not an error. */
GMF_API gmf_status gmf_integrate(const gmf_field* field, const char* method,
                                 size_t n_steps, double t_start, double t_end,
                                 size_t record_every, const double* x0,
                                 size_t dim, gmf_trajectory** out);

GMF_API gmf_status gmf_trajectory_num_records(const gmf_trajectory* traj,
                                              size_t* out);
GMF_API gmf_status gmf_trajectory_dim(const gmf_trajectory* traj, size_t* out);
/* Any out-pointer may be NULL to skip that component; x needs dim doubles. */
GMF_API gmf_status gmf_trajectory_record(const gmf_trajectory* traj,
                                         size_t index, double* t, double* x,
                                         double* norm, double* omega);
/* Index of the most responsible component at the final state, or -1 if the
 * trajectory diverged. */
GMF_API gmf_status gmf_trajectory_final_mode(const gmf_trajectory* traj,
                                             int* out);
/* diverged: 1/0; step: index of the offending step (-1 if none); magnitude:
 * largest finite coordinate of the rejected state. Null pointers skip. */
GMF_API gmf_status gmf_trajectory_divergence(const gmf_trajectory* traj,
                                             int* diverged, int* step,
                                             double* magnitude);
GMF_API void gmf_trajectory_release(gmf_trajectory* traj);

/* --- Config-driven experiment runner -------------------------------------- */

/* Parse a strict-JSON experiment config, run it, and write verdict.json, the
 * experiment's CSV tables, and (last, atomically) manifest.json into the
 * output directory.
 *
 *   config_json   full config text (see gmf_run_file for the on-disk variant)
 *   experiment    optional expected experiment name: must match the config's
 *                 "experiment" key if that key is present, and supplies it if
 *                 absent; pass NULL to use the config's key alone
 *   output_dir    optional override of the config's output_dir; NULL keeps it
 *   seed          optional override of the config's seed; NULL keeps it
 *   out_summary   optional (may be NULL): JSON {"experiment", "exit_code",
 *                 "output_dir", "passed", "inconclusive", "artifacts": [...],
 *                 "verdict": {...}}; free with gmf_string_free
 *   out_exit_code optional (may be NULL): 0 = verdict passed or inconclusive,
 *                 2 = conclusive failure
 *
 * Execution errors (bad config, divergence, I/O, ...) return a non-GMF_OK
 * status with gmf_last_error() set and write no manifest; callers conventionally
 * map those to process exit code 1. */
GMF_API gmf_status gmf_run_json(const char* config_json, const char* experiment,
                                const char* output_dir, const uint64_t* seed,
                                char** out_summary, int* out_exit_code);
GMF_API gmf_status gmf_run_file(const char* config_path, const char* experiment,
                                const char* output_dir, const uint64_t* seed,
                                char** out_summary, int* out_exit_code);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* GMFLOW_H */
