#ifndef MILO_H
#define MILO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MiloStatus {
  MILO_STATUS_OK = 0,
  MILO_STATUS_NULL_POINTER = 1,
  MILO_STATUS_INVALID_ARGUMENT = 2,
  MILO_STATUS_CONFIG = 3,
  MILO_STATUS_RUNTIME = 4,
  MILO_STATUS_UTF8 = 5,
  MILO_STATUS_PANIC = 6,
} MiloStatus;

/*
 Parsed experiment with its environment, expert and behavior built.
 */
typedef struct MiloExperiment MiloExperiment;

/*
 Result of one method on one seed.
 */
typedef struct MiloRunResult MiloRunResult;

typedef struct MiloIterationMetrics {
  size_t iter;
  double ipm;
  double v_true;
  double v_model;
  double bc_loss;
  double penalty_mass;
} MiloIterationMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. Valid until the
 next call into the library on this thread.
 */
const char *milo_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *milo_version(void);

/*
 Parses an experiment config (JSON) and builds its environment and policies.

 # Safety
 `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MiloStatus milo_experiment_from_json(const char *json, struct MiloExperiment **out);

/*
 # Safety
 `exp` must come from [`milo_experiment_from_json`] and not be used afterwards.
 */
void milo_experiment_free(struct MiloExperiment *exp);

/*
 Normalized score of the behavior policy that generates the offline data.

 # Safety
 Pointers must be valid.
 */
enum MiloStatus milo_experiment_behavior_score(const struct MiloExperiment *exp, double *out);

/*
 Number of seeds listed in the config.

 # Safety
 Pointers must be valid.
 */
enum MiloStatus milo_experiment_num_seeds(const struct MiloExperiment *exp, size_t *out);

/*
 Generates the datasets for `seed` and runs `method` ("milo",
 "milo-nopess", "bc-expert", "bc-both" or "offline-rl") on them.

 # Safety
 `exp` must be valid, `method` NUL-terminated and `out` a valid pointer.
 */
enum MiloStatus milo_experiment_run(const struct MiloExperiment *exp,
                                    const char *method,
                                    uint64_t seed,
                                    struct MiloRunResult **out);

/*
 # Safety
 `res` must come from [`milo_experiment_run`] and not be used afterwards.
 */
void milo_run_result_free(struct MiloRunResult *res);

/*
 Final true-environment value (expected cumulative cost).

 # Safety
 Pointers must be valid.
 */
enum MiloStatus milo_run_result_final_value(const struct MiloRunResult *res, double *out);

/*
 Normalized score: 1 at the expert, 0 at uniformly random actions.

 # Safety
 Pointers must be valid.
 */
enum MiloStatus milo_run_result_score(const struct MiloRunResult *res, double *out);

/*
 # Safety
 Pointers must be valid.
 */
enum MiloStatus milo_run_result_num_iterations(const struct MiloRunResult *res, size_t *out);

/*
 Metrics of iteration `index` (zero-based).

 # Safety
 Pointers must be valid.
 */
enum MiloStatus milo_run_result_iteration(const struct MiloRunResult *res,
                                          size_t index,
                                          struct MiloIterationMetrics *out);

/*
 Full report as JSON. Release the string with [`milo_string_free`].

 # Safety
 Pointers must be valid.
 */
enum MiloStatus milo_run_result_to_json(const struct MiloRunResult *res, char **out);

/*
 # Safety
 `s` must come from this library and not be used afterwards.
 */
void milo_string_free(char *s);

/*
 Closed-form MMD best response: `w = delta / ||delta||` (zero when the
 means agree) and the gap `||delta||`, for `delta = mean_model - mean_expert`.

 # Safety
 `mean_model`, `mean_expert` and `w_out` must hold `dim` doubles.
 */
enum MiloStatus milo_mmd_best_response(const double *mean_model,
                                       const double *mean_expert,
                                       size_t dim,
                                       double *w_out,
                                       double *value_out);

/*
 `(j_random - j) / (j_random - j_expert)`.
 */
double milo_normalized_score(double j_random, double j_expert, double j);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MILO_H */
