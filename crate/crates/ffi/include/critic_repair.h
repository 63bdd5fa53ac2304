#ifndef CRITIC_REPAIR_H
#define CRITIC_REPAIR_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>

/**
 * Status codes. Values 0 to 4 match the command-line exit codes.
 */
typedef enum CrStatus {
  CR_STATUS_OK = 0,
  /**
   * Invalid configuration, checkpoint, environment name or parameter.
   */
  CR_STATUS_CONFIG_ERROR = 1,
  CR_STATUS_BASELINE_EXHAUSTED = 2,
  /**
   * The policy has counterexamples.
   */
  CR_STATUS_UNSAFE = 3,
  CR_STATUS_BUDGET_EXHAUSTED = 4,
  CR_STATUS_NULL_POINTER = 10,
  CR_STATUS_INVALID_UTF8 = 11,
  CR_STATUS_DIMENSION_MISMATCH = 12,
  CR_STATUS_INTERNAL = 13,
} CrStatus;

/**
 * Opaque environment handle.
 */
typedef struct CrEnv CrEnv;

/**
 * Opaque network handle.
 */
typedef struct CrNetwork CrNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *cr_last_error(void);

/**
 * Builds a built-in environment by name with `n` parameter overrides.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `keys` and `values` must point to
 * `n` entries each (may be null when `n` is 0); `out` must be writable.
 */
enum CrStatus cr_env_new(const char *name,
                         const char *const *keys,
                         const double *values,
                         size_t n,
                         struct CrEnv **out);

/**
 * # Safety
 * `env` must come from `cr_env_new` and not be used afterwards; null is ignored.
 */
void cr_env_free(struct CrEnv *env);

/**
 * State dimension, or 0 for a null handle.
 *
 * # Safety
 * `env` must be null or a live handle.
 */
size_t cr_env_state_dim(const struct CrEnv *env);

/**
 * Action dimension, or 0 for a null handle.
 *
 * # Safety
 * `env` must be null or a live handle.
 */
size_t cr_env_action_dim(const struct CrEnv *env);

/**
 * Loads a network checkpoint from a JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum CrStatus cr_network_load(const char *path, struct CrNetwork **out);

/**
 * Parses a network checkpoint held in memory.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` writable.
 */
enum CrStatus cr_network_from_json(const char *json, struct CrNetwork **out);

/**
 * # Safety
 * `net` must come from this library and not be used afterwards; null is ignored.
 */
void cr_network_free(struct CrNetwork *net);

/**
 * Input dimension, or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t cr_network_input_dim(const struct CrNetwork *net);

/**
 * Output dimension, or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t cr_network_output_dim(const struct CrNetwork *net);

/**
 * Evaluates the network; `output_len` must equal the output dimension.
 *
 * # Safety
 * `input` must hold `input_len` values and `output` room for `output_len`.
 */
enum CrStatus cr_network_forward(const struct CrNetwork *net,
                                 const double *input,
                                 size_t input_len,
                                 double *output,
                                 size_t output_len);

/**
 * Minimum satisfaction along the rollout from `s0` over the environment's
 * default horizon. Returns `Ok` with the value in `out` whatever its sign.
 *
 * # Safety
 * Handles must be live, `s0` must hold `len` values and `out` be writable.
 */
enum CrStatus cr_safety_value(const struct CrEnv *env,
                              const struct CrNetwork *policy,
                              const double *s0,
                              size_t len,
                              double *out);

/**
 * Checks every grid point of the initial box at `resolution`. Returns `Ok`
 * when all are safe and `Unsafe` otherwise; the counts are written either way.
 *
 * # Safety
 * Handles must be live; the count pointers may be null.
 */
enum CrStatus cr_verify_grid(const struct CrEnv *env,
                             const struct CrNetwork *policy,
                             double resolution,
                             size_t grid_cap,
                             size_t *states_checked,
                             size_t *unsafe_points);

/**
 * Runs the `repair` subcommand and writes its files into `out_dir`.
 * `critic` may be null to start from a fresh critic.
 *
 * # Safety
 * The non-null arguments must be NUL-terminated strings.
 */
enum CrStatus cr_repair(const char *config,
                        const char *policy,
                        const char *critic,
                        const char *out_dir);

/**
 * Runs the command-line front end with `argv[0..argc]` and returns its exit
 * code. `argv[0]` is the program name.
 *
 * # Safety
 * `argv` must hold `argc` NUL-terminated strings.
 */
int cr_cli_main(int argc, const char *const *argv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CRITIC_REPAIR_H */
