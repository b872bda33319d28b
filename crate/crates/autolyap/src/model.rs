//! Parameter containers and conversions for the block-pendulum system and
//! the general colored-plus-white-noise excitation frame it embeds into.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{validate_ou_system, ValidationReport};

/// Physical constants of the block-pendulum rig (SI-consistent, all positive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParams {
    pub m1: f64,
    pub m2: f64,
    pub c1: f64,
    pub c2: f64,
    pub k1: f64,
    pub ell: f64,
    pub g: f64,
    pub nu_hat: f64,
}

/// Compound-pendulum variant: moment of inertia `i` about the pivot and
/// pivot-to-center distance `d` replace the simple pendulum length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompoundParams {
    pub m1: f64,
    pub m2: f64,
    pub c1: f64,
    pub c2: f64,
    pub k1: f64,
    pub g: f64,
    pub nu_hat: f64,
    pub i: f64,
    pub d: f64,
}

/// Scaled block-pendulum constants.
///
/// The scaled dampings are `zeta1 = c1/(2(m1+m2))` and `zeta2 = c2/(2 m2 l^2)`:
/// these are the unique choices under which dividing the equations of motion
/// by `l (m1+m2)` and `m2 l^2` respectively yields the dimensionless system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaledParams {
    pub zeta1: f64,
    pub zeta2: f64,
    pub chi: f64,
    pub kappa: f64,
    pub nu: f64,
    pub r_mass: f64,
}

impl ScaledParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("zeta1", self.zeta1),
            ("zeta2", self.zeta2),
            ("chi", self.chi),
            ("kappa", self.kappa),
            ("nu", self.nu),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParam(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.r_mass > 0.0 && self.r_mass < 1.0) {
            return Err(Error::InvalidMassRatio(self.r_mass));
        }
        Ok(())
    }

    /// Damped pendulum frequency `sqrt(kappa^2 - zeta2^2)`; errors when the
    /// pendulum is overdamped.
    pub fn kappa_d(&self) -> Result<f64> {
        kappa_d(self.zeta2, self.kappa)
    }
}

pub fn kappa_d(zeta2: f64, kappa: f64) -> Result<f64> {
    if zeta2 >= kappa {
        return Err(Error::OverdampedPendulum { zeta2, kappa });
    }
    Ok((kappa * kappa - zeta2 * zeta2).sqrt())
}

/// Driving Ornstein-Uhlenbeck system `dv = A v dt + B dW`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl OuSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "B has {} rows but A is {0}x{0}",
                b.nrows()
            )));
        }
        if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParam("A and B entries must be finite".into()));
        }
        Ok(Self { a, b })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn noise_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn validate(&self) -> Result<ValidationReport> {
        validate_ou_system(&self.a, &self.b)
    }
}

/// Excitation coefficients: `xi(t) = <a, v(t)> + <gamma, dW/dt>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Excitation {
    pub a: DVector<f64>,
    pub gamma: DVector<f64>,
}

impl Excitation {
    pub fn is_zero(&self) -> bool {
        self.a.iter().all(|&x| x == 0.0) && self.gamma.iter().all(|&x| x == 0.0)
    }
}

/// The general parametric-excitation model: OU source, excitation vectors,
/// and the oscillator constants of the secondary (pendulum) equation.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralModel {
    pub ou: OuSystem,
    pub exc: Excitation,
    pub zeta2: f64,
    pub kappa: f64,
}

impl GeneralModel {
    pub fn new(ou: OuSystem, exc: Excitation, zeta2: f64, kappa: f64) -> Result<Self> {
        if exc.a.len() != ou.dim() {
            return Err(Error::DimensionMismatch(format!(
                "excitation vector a has length {} but dim(A) = {}",
                exc.a.len(),
                ou.dim()
            )));
        }
        if exc.gamma.len() != ou.noise_dim() {
            return Err(Error::DimensionMismatch(format!(
                "gamma has length {} but B has {} columns",
                exc.gamma.len(),
                ou.noise_dim()
            )));
        }
        if zeta2 < 0.0 || !zeta2.is_finite() {
            return Err(Error::InvalidParam(format!(
                "zeta2 must be >= 0, got {zeta2}"
            )));
        }
        if kappa <= 0.0 || !kappa.is_finite() {
            return Err(Error::InvalidParam(format!(
                "kappa must be > 0, got {kappa}"
            )));
        }
        Ok(Self {
            ou,
            exc,
            zeta2,
            kappa,
        })
    }

    pub fn kappa_d(&self) -> Result<f64> {
        kappa_d(self.zeta2, self.kappa)
    }

    /// Scaled parameters if this model is a block embedding, i.e. has exactly
    /// the matrix/vector structure produced by [`block_embedding`].
    pub fn as_block(&self) -> Result<ScaledParams> {
        let err = |what: &str| Error::NotBlockModel(what.to_string());
        let a = &self.ou.a;
        let b = &self.ou.b;
        if self.ou.dim() != 2 || self.ou.noise_dim() != 1 {
            return Err(err("expected d = 2, m = 1"));
        }
        if a[(0, 0)] != 0.0 || a[(0, 1)] != 1.0 || b[(0, 0)] != 0.0 {
            return Err(err("A, B do not have companion form"));
        }
        let chi2 = -a[(1, 0)];
        let zeta1 = -a[(1, 1)] / 2.0;
        let nu = b[(1, 0)];
        if chi2 < 0.0 || zeta1 < 0.0 || nu < 0.0 {
            return Err(err("negative chi^2, zeta1 or nu"));
        }
        let tol = 1e-12;
        if (self.exc.a[0] + chi2).abs() > tol * (1.0 + chi2.abs())
            || (self.exc.a[1] + 2.0 * zeta1).abs() > tol * (1.0 + zeta1.abs())
            || (self.exc.gamma[0] - nu).abs() > tol * (1.0 + nu.abs())
        {
            return Err(err("excitation vectors are not (-chi^2, -2 zeta1), (nu)"));
        }
        Ok(ScaledParams {
            zeta1,
            zeta2: self.zeta2,
            chi: chi2.sqrt(),
            kappa: self.kappa,
            nu,
            // Not recoverable from the linear data; callers needing the mass
            // ratio must keep the original ScaledParams.
            r_mass: 0.5,
        })
    }
}

/// Simulation grid and ensemble description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimScheme {
    pub dt: f64,
    pub t_final: f64,
    pub burn_in: f64,
    pub seed: u64,
    pub n_traj: usize,
}

impl Default for SimScheme {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_final: 1000.0,
            burn_in: 50.0,
            seed: 42,
            n_traj: 16,
        }
    }
}

impl SimScheme {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidParam(format!(
                "dt must be > 0, got {}",
                self.dt
            )));
        }
        if !(self.t_final > self.dt) {
            return Err(Error::InvalidParam(format!(
                "t_final must exceed dt, got {}",
                self.t_final
            )));
        }
        if self.burn_in < 0.0 || self.burn_in >= self.t_final {
            return Err(Error::InvalidParam(format!(
                "burn_in must lie in [0, t_final), got {}",
                self.burn_in
            )));
        }
        if self.n_traj == 0 {
            return Err(Error::InvalidParam("n_traj must be positive".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

fn require_positive(pairs: &[(&str, f64)]) -> Result<()> {
    for (name, v) in pairs {
        if !(v.is_finite() && *v > 0.0) {
            return Err(Error::InvalidParam(format!("{name} must be > 0, got {v}")));
        }
    }
    Ok(())
}

/// Convert physical rig constants to the scaled parameterization.
pub fn physical_to_scaled(p: &PhysicalParams) -> Result<ScaledParams> {
    require_positive(&[
        ("m1", p.m1),
        ("m2", p.m2),
        ("k1", p.k1),
        ("ell", p.ell),
        ("g", p.g),
        ("nu_hat", p.nu_hat),
    ])?;
    if p.c1 < 0.0 || p.c2 < 0.0 {
        return Err(Error::InvalidParam("damping must be >= 0".into()));
    }
    let mt = p.m1 + p.m2;
    Ok(ScaledParams {
        zeta1: p.c1 / (2.0 * mt),
        zeta2: p.c2 / (2.0 * p.m2 * p.ell * p.ell),
        chi: (p.k1 / mt).sqrt(),
        kappa: (p.g / p.ell).sqrt(),
        nu: p.nu_hat / (p.ell * mt),
        r_mass: p.m2 / mt,
    })
}

/// Compound-pendulum reduction: effective length `L = I/(m2 d)` replaces the
/// pendulum length, and the mass ratio picks up the factor `d/L`.
pub fn compound_to_scaled(p: &CompoundParams) -> Result<ScaledParams> {
    require_positive(&[
        ("m1", p.m1),
        ("m2", p.m2),
        ("k1", p.k1),
        ("g", p.g),
        ("nu_hat", p.nu_hat),
        ("i", p.i),
        ("d", p.d),
    ])?;
    if p.c1 < 0.0 || p.c2 < 0.0 {
        return Err(Error::InvalidParam("damping must be >= 0".into()));
    }
    let l = p.i / (p.m2 * p.d);
    if l < p.d {
        return Err(Error::EffectiveLengthViolation { l, d: p.d });
    }
    let mt = p.m1 + p.m2;
    Ok(ScaledParams {
        zeta1: p.c1 / (2.0 * mt),
        zeta2: p.c2 / (2.0 * p.i),
        chi: (p.k1 / mt).sqrt(),
        kappa: (p.g / l).sqrt(),
        nu: p.nu_hat / (l * mt),
        r_mass: (p.d / l) * p.m2 / mt,
    })
}

/// Embed the block model into the general frame:
/// `A = [[0,1],[-chi^2,-2 zeta1]]`, `B = [0; nu]`,
/// `a = (-chi^2, -2 zeta1)`, `gamma = (nu)`.
pub fn block_embedding(s: &ScaledParams) -> Result<GeneralModel> {
    s.validate()?;
    let chi2 = s.chi * s.chi;
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -chi2, -2.0 * s.zeta1]);
    let b = DMatrix::from_column_slice(2, 1, &[0.0, s.nu]);
    let exc = Excitation {
        a: DVector::from_column_slice(&[-chi2, -2.0 * s.zeta1]),
        gamma: DVector::from_column_slice(&[s.nu]),
    };
    GeneralModel::new(OuSystem::new(a, b)?, exc, s.zeta2, s.kappa)
}
