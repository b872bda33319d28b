//! Full nonlinear block-pendulum diffusion on `R^2 x S^1 x R`: simulation,
//! energy/Lyapunov-function diagnostics, and exponential-moment checks.
//!
//! Both noise entries are coefficients of the same scalar Wiener process, and
//! the angle noise vanishes on the single-mode set `u1 = u2 = 0`, which is
//! therefore exactly invariant for the integrator as well.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ScaledParams, SimScheme};
use crate::rng::{substream, Stream};

/// Blowup guard threshold on the reduced norm.
pub const BLOWUP_LIMIT: f64 = 1e8;

const TAU: f64 = 2.0 * std::f64::consts::PI;

/// State `(v1, v2, u1, u2) = (block position, block velocity, pendulum angle,
/// pendulum angular velocity)`, with `u1` wrapped to `[0, 2 pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearState {
    pub v1: f64,
    pub v2: f64,
    pub u1: f64,
    pub u2: f64,
}

impl NonlinearState {
    pub fn new(v1: f64, v2: f64, u1: f64, u2: f64) -> Self {
        Self {
            v1,
            v2,
            u1: u1.rem_euclid(TAU),
            u2,
        }
    }

    /// Reduced norm `sqrt(v1^2 + v2^2 + u2^2)`; the compact angle coordinate
    /// is deliberately excluded.
    pub fn norm(&self) -> f64 {
        (self.v1 * self.v1 + self.v2 * self.v2 + self.u2 * self.u2).sqrt()
    }
}

/// Drift vector and the (single-driver) noise column at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdeCoefficients {
    pub drift: [f64; 4],
    pub noise: [f64; 4],
}

fn check_mass_ratio(params: &ScaledParams) -> Result<f64> {
    let r = params.r_mass;
    if !(r > 0.0 && r < 1.0) || !r.is_finite() {
        return Err(Error::InvalidMassRatio(r));
    }
    Ok(r)
}

/// Drift and noise of the nonlinear system; the denominator `1 - R sin^2 u1`
/// is computed once and shared by all four coupled terms.
pub fn sde_coefficients(params: &ScaledParams, u: &NonlinearState) -> Result<SdeCoefficients> {
    let r = check_mass_ratio(params)?;
    let (sin, cos) = u.u1.sin_cos();
    let denom = 1.0 - r * sin * sin;
    let chi2 = params.chi * params.chi;
    let k2 = params.kappa * params.kappa;
    let dv2 = (-2.0 * params.zeta1 * u.v2 - chi2 * u.v1 + r * u.u2 * u.u2 * cos
        - 2.0 * r * params.zeta2 * u.u2 * sin
        - r * k2 * sin * sin)
        / denom;
    let du2 = (-2.0 * params.zeta2 * u.u2
        - k2 * sin
        - 2.0 * params.zeta1 * u.v2 * sin
        - chi2 * u.v1 * sin
        + r * u.u2 * u.u2 * sin * cos)
        / denom;
    Ok(SdeCoefficients {
        drift: [u.v2, dv2, u.u2, du2],
        noise: [0.0, params.nu / denom, 0.0, params.nu * sin / denom],
    })
}

/// A nonlinear trajectory on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearPath {
    pub dt: f64,
    pub states: Vec<NonlinearState>,
}

/// Euler-Maruyama simulation of one trajectory; deterministic per
/// `(scheme.seed, traj_index)`.
pub fn simulate_nonlinear_traj(
    params: &ScaledParams,
    scheme: &SimScheme,
    u0: &NonlinearState,
    traj_index: u64,
) -> Result<NonlinearPath> {
    scheme.validate()?;
    check_mass_ratio(params)?;
    let n_steps = scheme.n_steps();
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut u = NonlinearState::new(u0.v1, u0.v2, u0.u1, u0.u2);
    states.push(u);
    let mut rng = substream(scheme.seed, traj_index, Stream::Nonlinear);
    let sqrt_dt = scheme.dt.sqrt();
    for step in 0..n_steps {
        let c = sde_coefficients(params, &u)?;
        let dw = sqrt_dt * rng.sample::<f64, _>(StandardNormal);
        u = NonlinearState::new(
            u.v1 + c.drift[0] * scheme.dt + c.noise[0] * dw,
            u.v2 + c.drift[1] * scheme.dt + c.noise[1] * dw,
            u.u1 + c.drift[2] * scheme.dt + c.noise[2] * dw,
            u.u2 + c.drift[3] * scheme.dt + c.noise[3] * dw,
        );
        if !(u.norm() <= BLOWUP_LIMIT) {
            return Err(Error::NumericalBlowup {
                t: (step + 1) as f64 * scheme.dt,
                limit: BLOWUP_LIMIT,
            });
        }
        states.push(u);
    }
    Ok(NonlinearPath {
        dt: scheme.dt,
        states,
    })
}

/// Single-trajectory convenience wrapper (trajectory index 0).
pub fn simulate_nonlinear(
    params: &ScaledParams,
    scheme: &SimScheme,
    u0: &NonlinearState,
) -> Result<NonlinearPath> {
    simulate_nonlinear_traj(params, scheme, u0, 0)
}

/// Drift-condition constants of the Lyapunov-function analysis, derived in
/// closed form from the quadratic-form inequality chain for a given `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityConstants {
    pub alpha: f64,
    /// `c1 |U|^2 <= F <= c2 + c3 |U|^2`
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// `LF <= c4 - c5 |U|^2`
    pub c4: f64,
    pub c5: f64,
}

/// Largest `alpha` keeping the drift bound negative definite.
pub fn alpha_star(params: &ScaledParams) -> Result<f64> {
    let r = check_mass_ratio(params)?;
    let chi2 = params.chi * params.chi;
    let a1 = 4.0 * params.zeta1 / (2.0 + r + 4.0 * params.zeta1 * params.zeta1 / chi2);
    Ok(a1.min(4.0 * params.zeta2))
}

/// Derive the constants for a specific `alpha`; all must be positive for the
/// bounds to be meaningful (guaranteed for `alpha` from [`choose_alpha`]).
pub fn stability_constants(params: &ScaledParams, alpha: f64) -> Result<StabilityConstants> {
    let r = check_mass_ratio(params)?;
    if alpha <= 0.0 {
        return Err(Error::InvalidParam("alpha must be positive".into()));
    }
    let chi2 = params.chi * params.chi;
    let sr = r.sqrt();
    let c1 = (chi2 / 2.0 - alpha)
        .min((1.0 - sr) / 2.0 - alpha / 2.0)
        .min((1.0 - sr) * r / 2.0 - alpha * r * r / 2.0);
    // 1 - cos u1 reaches 2, so the offset is 2 R kappa^2.
    let c2 = 2.0 * r * params.kappa * params.kappa;
    let c3 = (chi2 / 2.0 + alpha)
        .max((1.0 + sr) / 2.0 + alpha / 2.0)
        .max((1.0 + sr) * r / 2.0 + alpha * r * r / 2.0);
    let c4 = params.nu * params.nu / (2.0 * (1.0 - r));
    let c5 = (alpha * chi2 / 2.0)
        .min(
            2.0 * params.zeta1 - alpha / 2.0 * (2.0 + r + 4.0 * params.zeta1 * params.zeta1 / chi2),
        )
        .min(2.0 * r * params.zeta2 - alpha * r / 2.0);
    Ok(StabilityConstants {
        alpha,
        c1,
        c2,
        c3,
        c4,
        c5,
    })
}

/// Default `alpha = 0.9 min(1 - sqrt(R), chi^2/2, alpha_star)`: safely inside
/// the region where both the sandwich and the drift bound hold.
pub fn choose_alpha(params: &ScaledParams) -> Result<f64> {
    let r = check_mass_ratio(params)?;
    let chi2 = params.chi * params.chi;
    Ok(0.9 * (1.0 - r.sqrt()).min(chi2 / 2.0).min(alpha_star(params)?))
}

/// Energy and Lyapunov-function diagnostics at one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub e: f64,
    pub f: f64,
    /// Generator applied to the energy, in closed form.
    pub le: f64,
    /// Generator applied to `F`, in closed form.
    pub lf: f64,
    /// Whether `LF <= c4 - c5 |U|^2` holds at this state.
    pub lf_bound_ok: bool,
    pub alpha_used: f64,
    pub constants: StabilityConstants,
}

pub fn energy_functionals(
    params: &ScaledParams,
    alpha: f64,
    u: &NonlinearState,
) -> Result<EnergyReport> {
    let r = check_mass_ratio(params)?;
    let consts = stability_constants(params, alpha)?;
    let (sin, cos) = u.u1.sin_cos();
    let chi2 = params.chi * params.chi;
    let k2 = params.kappa * params.kappa;
    let e = 0.5 * u.v2 * u.v2 + 0.5 * r * u.u2 * u.u2 - r * u.v2 * u.u2 * sin
        + 0.5 * chi2 * u.v1 * u.v1
        + r * k2 * (1.0 - cos);
    let cross = u.v1 * (u.v2 - r * u.u2 * sin);
    let f = e + alpha * cross;
    let denom = 1.0 - r * sin * sin;
    let le = -2.0 * params.zeta1 * u.v2 * u.v2 - 2.0 * r * params.zeta2 * u.u2 * u.u2
        + params.nu * params.nu / (2.0 * denom);
    let l_cross =
        u.v2 * u.v2 - r * u.v2 * u.u2 * sin - 2.0 * params.zeta1 * u.v1 * u.v2 - chi2 * u.v1 * u.v1;
    let lf = le + alpha * l_cross;
    let n2 = u.norm() * u.norm();
    let lf_bound_ok = lf <= consts.c4 - consts.c5 * n2 + 1e-12 * (1.0 + n2);
    Ok(EnergyReport {
        e,
        f,
        le,
        lf,
        lf_bound_ok,
        alpha_used: alpha,
        constants: consts,
    })
}

/// Checkpointed ensemble averages of `exp(beta |U|^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpMomentSeries {
    pub times: Vec<f64>,
    pub averages: Vec<f64>,
    /// True when no post-burn-in checkpoint exceeds 10x the running median.
    pub bounded: bool,
}

/// Monitor `E exp(beta |U|^2)` along the ensemble; the stationary theory
/// guarantees a finite limit for small enough `beta`.
pub fn exp_moment_diagnostic(
    params: &ScaledParams,
    scheme: &SimScheme,
    beta: f64,
    u0: &NonlinearState,
) -> Result<ExpMomentSeries> {
    scheme.validate()?;
    check_mass_ratio(params)?;
    if beta <= 0.0 {
        return Err(Error::InvalidParam("beta must be positive".into()));
    }
    let n_checks = 100usize;
    let check_every = (scheme.n_steps() / n_checks).max(1);
    let per_traj: Result<Vec<Vec<f64>>> = (0..scheme.n_traj as u64)
        .into_par_iter()
        .map(|idx| {
            let mut rng = substream(scheme.seed, idx, Stream::Nonlinear);
            let mut u = NonlinearState::new(u0.v1, u0.v2, u0.u1, u0.u2);
            let sqrt_dt = scheme.dt.sqrt();
            let mut vals = Vec::with_capacity(n_checks + 1);
            vals.push((beta * u.norm().powi(2)).exp());
            for step in 0..scheme.n_steps() {
                let c = sde_coefficients(params, &u)?;
                let dw = sqrt_dt * rng.sample::<f64, _>(StandardNormal);
                u = NonlinearState::new(
                    u.v1 + c.drift[0] * scheme.dt + c.noise[0] * dw,
                    u.v2 + c.drift[1] * scheme.dt + c.noise[1] * dw,
                    u.u1 + c.drift[2] * scheme.dt + c.noise[2] * dw,
                    u.u2 + c.drift[3] * scheme.dt + c.noise[3] * dw,
                );
                if !(u.norm() <= BLOWUP_LIMIT) {
                    return Err(Error::NumericalBlowup {
                        t: (step + 1) as f64 * scheme.dt,
                        limit: BLOWUP_LIMIT,
                    });
                }
                if step % check_every == check_every - 1 {
                    vals.push((beta * u.norm().powi(2)).exp());
                }
            }
            Ok(vals)
        })
        .collect();
    let per_traj = per_traj?;
    let n_points = per_traj[0].len();
    let times: Vec<f64> = (0..n_points)
        .map(|i| i as f64 * check_every as f64 * scheme.dt)
        .collect();
    let averages: Vec<f64> = (0..n_points)
        .map(|i| per_traj.iter().map(|v| v[i]).sum::<f64>() / per_traj.len() as f64)
        .collect();
    let burn_idx = times.iter().position(|&t| t >= scheme.burn_in).unwrap_or(0);
    let mut bounded = true;
    let mut seen: Vec<f64> = Vec::new();
    for &x in &averages[burn_idx..] {
        seen.push(x);
        let mut sorted = seen.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = sorted[sorted.len() / 2];
        if x > 10.0 * median {
            bounded = false;
        }
    }
    Ok(ExpMomentSeries {
        times,
        averages,
        bounded,
    })
}
