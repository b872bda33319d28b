use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// The drift matrix has an eigenvalue with nonnegative real part, so the
    /// driving process has no stationary measure.
    #[error("matrix is not Hurwitz (spectral abscissa {abscissa})")]
    NonHurwitz { abscissa: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Resolvent (A - i w I) was singular; cannot happen for Hurwitz A and
    /// real w, so this signals an internal inconsistency.
    #[error("singular resolvent at omega = {omega} (internal error)")]
    SingularResolvent { omega: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// Compound pendulum with effective length L = I/(m2 d) < d.
    #[error("effective length {l} is smaller than pivot distance {d}")]
    EffectiveLengthViolation { l: f64, d: f64 },

    /// zeta2 >= kappa: the damped frequency kappa_d is not real.
    #[error("overdamped pendulum: zeta2 = {zeta2} >= kappa = {kappa}")]
    OverdampedPendulum { zeta2: f64, kappa: f64 },

    #[error("mass ratio must lie in (0,1), got {0}")]
    InvalidMassRatio(f64),

    #[error("state norm exceeded {limit:.1e} at t = {t}; reduce dt")]
    NumericalBlowup { t: f64, limit: f64 },

    #[error("mollifier width {delta} must exceed 2*dt = {min}")]
    KernelTooNarrow { delta: f64, min: f64 },

    #[error("model is not a block embedding: {0}")]
    NotBlockModel(String),

    /// The adjoint lambda2 route is only defined at omega = 2 kappa_d.
    #[error("adjoint method requires omega = 2 kappa_d = {expected}, got {omega}")]
    FrequencyMismatch { omega: f64, expected: f64 },

    #[error("invalid boundary query: {0}")]
    InvalidQuery(String),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("config validation error: {0}")]
    Validation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
