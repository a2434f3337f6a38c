#ifndef SOED_H
#define SOED_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SoedStatus {
  SOED_STATUS_OK = 0,
  SOED_STATUS_NULL_POINTER = 1,
  SOED_STATUS_CONFIG = 2,
  SOED_STATUS_NUMERICAL = 3,
  SOED_STATUS_INVALID_ARGUMENT = 4,
  SOED_STATUS_IO = 5,
  SOED_STATUS_PANIC = 6,
} SoedStatus;

// Opaque policy handle.
typedef struct SoedPolicy SoedPolicy;

// Opaque problem handle.
typedef struct SoedProblem SoedProblem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty if none. The
// pointer stays valid until the next failing call on the same thread.
const char *soed_last_error(void);

// Builds `linear_gaussian` or `source_case{1,2,3}` (desk profile,
// tabulated solver).
//
// # Safety
// `name` must be a NUL-terminated string and `out` a valid pointer.
enum SoedStatus soed_problem_builtin(const char *name, struct SoedProblem **out);

// # Safety
// `problem` must come from `soed_problem_builtin` or be null.
void soed_problem_free(struct SoedProblem *problem);

// Number of experiments, design and observation dimensions.
//
// # Safety
// `problem` must be a live handle; the output pointers may be null.
enum SoedStatus soed_problem_dims(const struct SoedProblem *problem,
                                  size_t *horizon,
                                  size_t *design_dim,
                                  size_t *obs_dim);

// Trains a policy. `overrides_json` is a JSON object of training settings
// applied over the problem's preset, or null for the preset itself.
//
// # Safety
// `problem` must be a live handle, `overrides_json` null or NUL-terminated,
// `out` a valid pointer.
enum SoedStatus soed_train(const struct SoedProblem *problem,
                           const char *overrides_json,
                           struct SoedPolicy **out);

// # Safety
// `path` must be NUL-terminated and `out` a valid pointer.
enum SoedStatus soed_policy_load(const char *path, struct SoedPolicy **out);

// # Safety
// `policy` must be a live handle and `path` NUL-terminated.
enum SoedStatus soed_policy_save(const struct SoedPolicy *policy, const char *path);

// # Safety
// `policy` must come from this library or be null.
void soed_policy_free(struct SoedPolicy *policy);

// Design for experiment `stage` given the `stage` previous experiments:
// `designs` holds `stage × design_dim` and `observations` `stage × obs_dim`
// values, row-major. Writes `design_dim` values to `out`.
//
// # Safety
// The arrays must hold the stated number of values (they may be null when
// `stage` is 0) and `out` must have room for `out_len` values.
enum SoedStatus soed_policy_act(const struct SoedPolicy *policy,
                                const struct SoedProblem *problem,
                                size_t stage,
                                const double *designs,
                                const double *observations,
                                double *out,
                                size_t out_len);

// Mean total reward and its standard error over `n` evaluation episodes.
//
// # Safety
// Handles must be live; `mean` and `standard_error` valid pointers.
enum SoedStatus soed_evaluate(const struct SoedPolicy *policy,
                              const struct SoedProblem *problem,
                              size_t n,
                              uint64_t seed,
                              double *mean,
                              double *standard_error);

// Optimal expected utility of the linear-Gaussian benchmark.
//
// # Safety
// `out` must be a valid pointer.
enum SoedStatus soed_lg_optimal_utility(double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOED_H */
