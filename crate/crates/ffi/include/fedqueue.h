/* C interface to the fedqueue queueing-network toolkit. */

#ifndef FEDQUEUE_H
#define FEDQUEUE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Delay-counting convention selector for `fq_delay_stats`.
 */
typedef enum FqConvention {
  /**
   * Steps strictly between dispatch and completion.
   */
  FqConvention_Strict = 0,
  /**
   * Strict count plus the completing step itself.
   */
  FqConvention_Inclusive = 1,
} FqConvention;

/**
 * Service-time law selector for `fq_simulate`.
 */
typedef enum FqServiceLaw {
  /**
   * Exponential service at each node's rate.
   */
  FqServiceLaw_Exponential = 0,
  /**
   * Deterministic service of length 1/rate.
   */
  FqServiceLaw_Deterministic = 1,
} FqServiceLaw;

/**
 * Outcome of an FFI call.
 */
typedef enum FqStatus {
  /**
   * Success.
   */
  FqStatus_Ok = 0,
  /**
   * A required pointer was null.
   */
  FqStatus_NullPointer = 1,
  /**
   * Arguments failed validation; see `fq_last_error`.
   */
  FqStatus_InvalidArgument = 2,
  /**
   * A panic was caught at the boundary; see `fq_last_error`.
   */
  FqStatus_Panic = 3,
} FqStatus;

/**
 * Closed network handle.
 */
typedef struct FqNetwork FqNetwork;

/**
 * Completion trace handle.
 */
typedef struct FqTrace FqTrace;

/**
 * Closed-form saturated-regime references for a two-cluster network.
 */
typedef struct FqTwoClusterBounds {
  /**
   * Fast-cluster stationary mean delay.
   */
  double fast;
  /**
   * Slow-cluster stationary mean delay.
   */
  double slow;
  /**
   * Fast-cluster midpoint estimate.
   */
  double fast_mid;
  /**
   * Slow-cluster midpoint estimate.
   */
  double slow_mid;
  /**
   * Fast-cluster simplified (leading-order) estimate.
   */
  double fast_simplified;
  /**
   * Slow-cluster simplified (leading-order) estimate.
   */
  double slow_simplified;
  /**
   * Saturated total completion rate.
   */
  double lambda;
  /**
   * Erlang CDF ratio entering the fast-cluster forms.
   */
  double gamma;
} FqTwoClusterBounds;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Description of the most recent failure on this thread, as a pointer
 * valid until the next failing call on the same thread. Never null;
 * empty when no failure has occurred.
 */
const char *fq_last_error(void);

/**
 * Builds a closed network from `n` service rates and an optional
 * sampling vector (null means uniform). On success writes an owned
 * handle to `out`.
 *
 * # Safety
 * `mu` must point to `n` doubles, `p` to `n` doubles or be null, and
 * `out` must be a valid destination pointer.
 */
enum FqStatus fq_network_new(const double *mu,
                             const double *p,
                             size_t n,
                             uint32_t concurrency,
                             struct FqNetwork **out);

/**
 * Releases a network handle. Null is a no-op.
 *
 * # Safety
 * `net` must be a handle from `fq_network_new` not yet freed.
 */
void fq_network_free(struct FqNetwork *net);

/**
 * Number of nodes in the network; zero when the handle is null.
 *
 * # Safety
 * `net` must be a live handle or null.
 */
size_t fq_network_n(const struct FqNetwork *net);

/**
 * Stationary expected queue lengths at the network's population,
 * written into `out` (length `n`).
 *
 * # Safety
 * `net` must be a live handle; `out` must hold `fq_network_n` doubles.
 */
enum FqStatus fq_network_queue_lengths(const struct FqNetwork *net, double *out);

/**
 * Stationary per-node busy probabilities, written into `out`
 * (length `n`).
 *
 * # Safety
 * `net` must be a live handle; `out` must hold `fq_network_n` doubles.
 */
enum FqStatus fq_network_busy_probabilities(const struct FqNetwork *net, double *out);

/**
 * Stationary total completion rate.
 *
 * # Safety
 * `net` must be a live handle; `out` must be a valid destination.
 */
enum FqStatus fq_network_throughput(const struct FqNetwork *net, double *out);

/**
 * Simulates `horizon` completions and writes an owned trace handle to
 * `out`.
 *
 * # Safety
 * `net` must be a live handle and `out` a valid destination pointer.
 */
enum FqStatus fq_simulate(const struct FqNetwork *net,
                          uint64_t horizon,
                          uint64_t seed,
                          enum FqServiceLaw law,
                          struct FqTrace **out);

/**
 * Releases a trace handle. Null is a no-op.
 *
 * # Safety
 * `trace` must be a handle from `fq_simulate` not yet freed.
 */
void fq_trace_free(struct FqTrace *trace);

/**
 * Number of completions recorded in the trace; zero on null.
 *
 * # Safety
 * `trace` must be a live handle or null.
 */
uint64_t fq_trace_len(const struct FqTrace *trace);

/**
 * Delay and queue statistics of a trace: per-node mean delays and
 * holding-time-weighted mean queue lengths (arrays of length `n`), plus
 * the completion rate over the measurement window. Any output pointer
 * may be null to skip that figure.
 *
 * # Safety
 * `trace` must be a live handle; non-null outputs must hold `n` doubles
 * (`mean_delay`, `mean_queue`) or one double (`throughput`).
 */
enum FqStatus fq_delay_stats(const struct FqTrace *trace,
                             double burn_in_frac,
                             enum FqConvention convention,
                             double *mean_delay,
                             double *mean_queue,
                             double *throughput);

/**
 * Erlang CDF ratio Γ governing fast-cluster limiting queue lengths.
 *
 * # Safety
 * `out` must be a valid destination pointer.
 */
enum FqStatus fq_gamma_ratio(uint32_t n_fast, double c, double *out);

/**
 * Closed-form saturated delay references for a two-cluster network with
 * `n_fast` nodes at rate `mu_f` and `n − n_fast` at rate `mu_s`.
 *
 * # Safety
 * `out` must be a valid destination pointer.
 */
enum FqStatus fq_two_cluster_bounds(size_t n,
                                    size_t n_fast,
                                    double mu_f,
                                    double mu_s,
                                    uint32_t concurrency,
                                    struct FqTwoClusterBounds *out);

/**
 * Step size minimizing the convergence bound, clamped to its stability
 * cap, for sampling vector `p` and stationary delay profile `m` (both
 * length `n`).
 *
 * # Safety
 * `p` and `m` must point to `n` doubles; `out` must be a valid
 * destination pointer.
 */
enum FqStatus fq_optimal_step_size(double l,
                                   double g2,
                                   double sigma2,
                                   double rho2,
                                   double a,
                                   double t,
                                   uint32_t concurrency,
                                   const double *p,
                                   const double *m,
                                   size_t n,
                                   double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDQUEUE_H */
