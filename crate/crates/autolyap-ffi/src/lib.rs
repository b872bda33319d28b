//! C ABI for the stochastic-stability toolkit.
//!
//! Handles are opaque pointers created and destroyed by this library; every
//! function returns a status code and writes results through out-pointers.
//! All functions are safe to call from any thread as long as a handle is not
//! freed while in use.

use std::ptr;

use autolyap::asymptotics::{expansion, lambda2, stability_boundary, Lambda2Method, Scaling};
use autolyap::asymptotics::{BoundaryKind, BoundaryQuery};
use autolyap::error::Error;
use autolyap::khasminskii::{estimate_lyapunov_angle, estimate_lyapunov_lognorm, upper_bound};
use autolyap::model::{block_embedding, GeneralModel, ScaledParams, SimScheme};

/// Status codes returned by every API function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AutolyapStatus {
    /// Success.
    Ok = 0,
    /// A pointer argument was null.
    NullPointer = 1,
    /// Parameters violate a model invariant (full message not exposed).
    InvalidParam = 2,
    /// A numerical failure (non-Hurwitz drift, blowup, singular solve).
    NumericalFailure = 3,
}

/// Lyapunov-exponent estimator selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AutolyapMethod {
    /// Time-averaged angle-process integrand.
    Angle = 0,
    /// Direct log-norm growth.
    Lognorm = 1,
}

/// Opaque model handle.
pub struct AutolyapModel {
    model: GeneralModel,
}

fn status_of(e: &Error) -> AutolyapStatus {
    match e {
        Error::NonHurwitz { .. }
        | Error::NumericalBlowup { .. }
        | Error::SingularResolvent { .. } => AutolyapStatus::NumericalFailure,
        _ => AutolyapStatus::InvalidParam,
    }
}

/// Create a model from scaled block-pendulum parameters.  On success writes a
/// handle that must be released with `autolyap_model_free`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn autolyap_model_new_scaled(
    zeta1: f64,
    zeta2: f64,
    chi: f64,
    kappa: f64,
    nu: f64,
    r_mass: f64,
    out: *mut *mut AutolyapModel,
) -> AutolyapStatus {
    if out.is_null() {
        return AutolyapStatus::NullPointer;
    }
    let params = ScaledParams {
        zeta1,
        zeta2,
        chi,
        kappa,
        nu,
        r_mass,
    };
    match block_embedding(&params) {
        Ok(model) => {
            let handle = Box::new(AutolyapModel { model });
            ptr::write(out, Box::into_raw(handle));
            AutolyapStatus::Ok
        }
        Err(e) => {
            ptr::write(out, ptr::null_mut());
            status_of(&e)
        }
    }
}

/// Release a model handle.  Passing null is a no-op.
///
/// # Safety
/// `handle` must come from `autolyap_model_new_scaled` and not be used after.
#[no_mangle]
pub unsafe extern "C" fn autolyap_model_free(handle: *mut AutolyapModel) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Second-order expansion coefficient `lambda2(omega)` (resolvent route).
///
/// # Safety
/// `handle` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn autolyap_lambda2(
    handle: *const AutolyapModel,
    omega: f64,
    out: *mut f64,
) -> AutolyapStatus {
    let (Some(h), false) = (handle.as_ref(), out.is_null()) else {
        return AutolyapStatus::NullPointer;
    };
    match lambda2(&h.model, omega, Lambda2Method::Resolvent) {
        Ok(v) => {
            ptr::write(out, v);
            AutolyapStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Small-noise expansion `lambda(eps) = -zeta2 + eps^2 lambda2(2 kappa_d)`.
///
/// # Safety
/// `handle` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn autolyap_expansion(
    handle: *const AutolyapModel,
    eps: f64,
    out: *mut f64,
) -> AutolyapStatus {
    let (Some(h), false) = (handle.as_ref(), out.is_null()) else {
        return AutolyapStatus::NullPointer;
    };
    match expansion(&h.model, eps, Scaling::NoiseOnly) {
        Ok(v) => {
            ptr::write(out, v);
            AutolyapStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Closed-form upper bound on the Lyapunov exponent at eps = 1.
///
/// # Safety
/// `handle` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn autolyap_upper_bound(
    handle: *const AutolyapModel,
    out: *mut f64,
) -> AutolyapStatus {
    let (Some(h), false) = (handle.as_ref(), out.is_null()) else {
        return AutolyapStatus::NullPointer;
    };
    match upper_bound(&h.model) {
        Ok(v) => {
            ptr::write(out, v);
            AutolyapStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Monte Carlo Lyapunov exponent estimate; writes the point estimate and the
/// ensemble standard error.
///
/// # Safety
/// `handle`, `out_value`, `out_stderr` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn autolyap_estimate(
    handle: *const AutolyapModel,
    eps: f64,
    dt: f64,
    t_final: f64,
    burn_in: f64,
    n_traj: usize,
    seed: u64,
    method: AutolyapMethod,
    out_value: *mut f64,
    out_stderr: *mut f64,
) -> AutolyapStatus {
    let (Some(h), false) = (handle.as_ref(), out_value.is_null() || out_stderr.is_null()) else {
        return AutolyapStatus::NullPointer;
    };
    let scheme = SimScheme {
        dt,
        t_final,
        burn_in,
        seed,
        n_traj,
    };
    let result = match method {
        AutolyapMethod::Angle => estimate_lyapunov_angle(&h.model, eps, &scheme),
        AutolyapMethod::Lognorm => estimate_lyapunov_lognorm(&h.model, eps, &scheme),
    };
    match result {
        Ok(est) => {
            ptr::write(out_value, est.value);
            ptr::write(out_stderr, est.stderr);
            AutolyapStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Critical noise intensity of the stochastic stability boundary at `kappa`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn autolyap_boundary_noise(
    zeta1: f64,
    zeta2: f64,
    chi: f64,
    kappa: f64,
    out: *mut f64,
) -> AutolyapStatus {
    if out.is_null() {
        return AutolyapStatus::NullPointer;
    }
    let params = ScaledParams {
        zeta1,
        zeta2,
        chi,
        kappa,
        nu: 1.0,
        r_mass: 0.5,
    };
    let q = BoundaryQuery {
        kind: BoundaryKind::Noise,
        kappa,
        omega: None,
        eps: None,
    };
    match stability_boundary(&q, &params) {
        Ok(v) => {
            ptr::write(out, v);
            AutolyapStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}
