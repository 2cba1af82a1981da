#ifndef NODEC_H
#define NODEC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result of every fallible call.
 */
typedef enum NodecStatus {
  NODEC_STATUS_OK = 0,
  NODEC_STATUS_NULL_POINTER = 1,
  NODEC_STATUS_INVALID_ARGUMENT = 2,
  NODEC_STATUS_DIVERGED = 3,
  NODEC_STATUS_INTERNAL = 4,
} NodecStatus;

typedef enum NodecOptimizer {
  NODEC_OPTIMIZER_SD = 0,
  NODEC_OPTIMIZER_ADAM = 1,
} NodecOptimizer;

/**
 * A fully connected controller and its parameters.
 */
typedef struct NodecMlp NodecMlp;

/**
 * A controlled system with boundary data.
 */
typedef struct NodecProblem NodecProblem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; empty after a success.
 * The pointer stays valid until the next nodec call on the same thread.
 */
const char *nodec_last_error(void);

/**
 * `ẋ = ax + bu` from `x0` to `target` on `[0, horizon]` with `steps` Euler steps.
 */
struct NodecProblem *nodec_problem_scalar_linear(double a,
                                                 double b,
                                                 double x0,
                                                 double target,
                                                 double horizon,
                                                 size_t steps);

/**
 * `ẋ = u` from `x0` to `target`.
 */
struct NodecProblem *nodec_problem_integrator(double x0,
                                              double target,
                                              double horizon,
                                              size_t steps);

/**
 * The two-dimensional linear benchmark.
 */
struct NodecProblem *nodec_problem_benchmark_2d(size_t steps);

/**
 * The moving particle with friction.
 */
struct NodecProblem *nodec_problem_moving_particle(size_t steps);

/**
 * A problem from a TOML table with a `kind` key.
 *
 * # Safety
 * `text` must be null or a valid NUL-terminated string.
 */
struct NodecProblem *nodec_problem_from_toml(const char *text);

/**
 * # Safety
 * `p` must be null or a handle from a `nodec_problem_*` constructor, freed once.
 */
void nodec_problem_free(struct NodecProblem *p);

/**
 * # Safety
 * `p` must be null or a live problem handle.
 */
size_t nodec_problem_state_dim(const struct NodecProblem *p);

/**
 * # Safety
 * `p` must be null or a live problem handle.
 */
size_t nodec_problem_control_dim(const struct NodecProblem *p);

/**
 * Optimal value of the problem's reference functional (control energy, or
 * work for the moving particle).
 *
 * # Safety
 * `p` must be a live problem handle and `out` writable.
 */
enum NodecStatus nodec_problem_oracle_energy(const struct NodecProblem *p, double *out);

/**
 * Controller with the fan-in uniform initialization drawn from `seed`.
 * `activation` is a name such as `"elu"`, `"tanh"`, `"relu"`.
 *
 * # Safety
 * `hidden` must point to `n_hidden` values (or be null with `n_hidden == 0`);
 * `activation` must be a valid NUL-terminated string.
 */
struct NodecMlp *nodec_mlp_new(const size_t *hidden,
                               size_t n_hidden,
                               const char *activation,
                               size_t output_dim,
                               bool bias,
                               uint64_t seed);

/**
 * # Safety
 * `m` must be null or a handle from `nodec_mlp_new`, freed once.
 */
void nodec_mlp_free(struct NodecMlp *m);

/**
 * # Safety
 * `m` must be null or a live network handle.
 */
size_t nodec_mlp_param_count(const struct NodecMlp *m);

/**
 * Copies the parameters into `out[0..len]`; `len` must equal the parameter count.
 *
 * # Safety
 * `m` must be a live handle and `out` writable for `len` values.
 */
enum NodecStatus nodec_mlp_get_params(const struct NodecMlp *m, double *out, size_t len);

/**
 * # Safety
 * `m` must be a live handle and `theta` readable for `len` values.
 */
enum NodecStatus nodec_mlp_set_params(struct NodecMlp *m, const double *theta, size_t len);

/**
 * Control `û(t)` written to `out[0..len]`; `len` must equal the output dimension.
 *
 * # Safety
 * `m` must be a live handle and `out` writable for `len` values.
 */
enum NodecStatus nodec_mlp_forward(const struct NodecMlp *m, double t, double *out, size_t len);

/**
 * Exact terminal-loss gradient by backpropagation through all Euler steps.
 *
 * # Safety
 * Handles must be live; `grad_out` writable for `len` values; `loss_out` null or writable.
 */
enum NodecStatus nodec_bptt_grad(const struct NodecProblem *p,
                                 const struct NodecMlp *m,
                                 double *grad_out,
                                 size_t len,
                                 double *loss_out);

/**
 * Trains the network in place on the terminal loss with BPTT; the handle ends
 * up holding the best parameters seen. On divergence the parameters are unchanged.
 *
 * # Safety
 * Handles must be live; `best_loss_out` null or writable.
 */
enum NodecStatus nodec_train(const struct NodecProblem *p,
                             struct NodecMlp *m,
                             enum NodecOptimizer optimizer,
                             double lr,
                             size_t epochs,
                             uint64_t seed,
                             double *best_loss_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NODEC_H */
