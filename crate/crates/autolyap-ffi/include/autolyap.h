#ifndef AUTOLYAP_H
#define AUTOLYAP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Lyapunov-exponent estimator selector.
 */
typedef enum AutolyapMethod {
  /**
   * Time-averaged angle-process integrand.
   */
  Angle = 0,
  /**
   * Direct log-norm growth.
   */
  Lognorm = 1,
} AutolyapMethod;

/**
 * Status codes returned by every API function.
 */
typedef enum AutolyapStatus {
  /**
   * Success.
   */
  Ok = 0,
  /**
   * A pointer argument was null.
   */
  NullPointer = 1,
  /**
   * Parameters violate a model invariant (full message not exposed).
   */
  InvalidParam = 2,
  /**
   * A numerical failure (non-Hurwitz drift, blowup, singular solve).
   */
  NumericalFailure = 3,
} AutolyapStatus;

/**
 * Opaque model handle.
 */
typedef struct AutolyapModel AutolyapModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Create a model from scaled block-pendulum parameters.  On success writes a
 * handle that must be released with `autolyap_model_free`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum AutolyapStatus autolyap_model_new_scaled(double zeta1,
                                              double zeta2,
                                              double chi,
                                              double kappa,
                                              double nu,
                                              double r_mass,
                                              struct AutolyapModel **out);

/**
 * Release a model handle.  Passing null is a no-op.
 *
 * # Safety
 * `handle` must come from `autolyap_model_new_scaled` and not be used after.
 */
void autolyap_model_free(struct AutolyapModel *handle);

/**
 * Second-order expansion coefficient `lambda2(omega)` (resolvent route).
 *
 * # Safety
 * `handle` and `out` must be valid pointers.
 */
enum AutolyapStatus autolyap_lambda2(const struct AutolyapModel *handle, double omega, double *out);

/**
 * Small-noise expansion `lambda(eps) = -zeta2 + eps^2 lambda2(2 kappa_d)`.
 *
 * # Safety
 * `handle` and `out` must be valid pointers.
 */
enum AutolyapStatus autolyap_expansion(const struct AutolyapModel *handle, double eps, double *out);

/**
 * Closed-form upper bound on the Lyapunov exponent at eps = 1.
 *
 * # Safety
 * `handle` and `out` must be valid pointers.
 */
enum AutolyapStatus autolyap_upper_bound(const struct AutolyapModel *handle, double *out);

/**
 * Monte Carlo Lyapunov exponent estimate; writes the point estimate and the
 * ensemble standard error.
 *
 * # Safety
 * `handle`, `out_value`, `out_stderr` must be valid pointers.
 */
enum AutolyapStatus autolyap_estimate(const struct AutolyapModel *handle,
                                      double eps,
                                      double dt,
                                      double t_final,
                                      double burn_in,
                                      uintptr_t n_traj,
                                      uint64_t seed,
                                      enum AutolyapMethod method,
                                      double *out_value,
                                      double *out_stderr);

/**
 * Critical noise intensity of the stochastic stability boundary at `kappa`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum AutolyapStatus autolyap_boundary_noise(double zeta1,
                                            double zeta2,
                                            double chi,
                                            double kappa,
                                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AUTOLYAP_H */
