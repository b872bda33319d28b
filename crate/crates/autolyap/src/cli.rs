//! Command-line front end: strict JSON config ingestion, subcommand dispatch,
//! deterministic seeding, and CSV/JSON emission.
//!
//! Exit codes: 0 success, 1 validation/config failure, 2 numerical failure,
//! 3 verify-suite failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    expansion, lambda2, lambda2_block, stability_boundary, BoundaryKind, BoundaryQuery,
    Lambda2Method, Scaling,
};
use crate::error::{Error, Result};
use crate::khasminskii::{
    estimate_lyapunov_angle, estimate_lyapunov_lognorm, upper_bound, LyapEstimate,
};
use crate::model::{
    block_embedding, compound_to_scaled, physical_to_scaled, CompoundParams, Excitation,
    GeneralModel, OuSystem, PhysicalParams, ScaledParams, SimScheme,
};
use crate::nonlinear::{simulate_nonlinear, NonlinearState};
use crate::ou::{xi_psd_limit, xi_psd_mollified, KernelKind, MollifierKernel};

#[derive(Debug, Parser)]
#[command(
    name = "autolyap",
    version,
    about = "Stochastic stability toolkit for the autoparametric block-pendulum system"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Angle,
    Lognorm,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Noise,
    Mathieu,
    Periodic,
}

impl From<KindArg> for BoundaryKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Noise => BoundaryKind::Noise,
            KindArg::Mathieu => BoundaryKind::Mathieu,
            KindArg::Periodic => BoundaryKind::Periodic,
        }
    }
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the eps list, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    /// Restrict estimation to one estimator.
    #[arg(long)]
    pub method: Option<MethodArg>,
    /// Override the boundary kind.
    #[arg(long)]
    pub kind: Option<KindArg>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Second-order coefficient lambda2 over a frequency grid.
    #[command(name = "lambda2-sweep")]
    Lambda2Sweep(Common),
    /// Critical noise intensity curves nu_c(kappa).
    Boundary(Common),
    /// Monte Carlo Lyapunov exponent estimates vs expansion and upper bound.
    Estimate(Common),
    /// One nonlinear trajectory path.
    Simulate(Common),
    /// Mollified excitation spectral density vs the analytic limit.
    Psd(Common),
    /// Run the invariant suite.
    Verify(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Lambda2Sweep(c)
            | Command::Boundary(c)
            | Command::Estimate(c)
            | Command::Simulate(c)
            | Command::Psd(c)
            | Command::Verify(c) => c,
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// General model spec: matrices as row-major nested arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub exc_a: Vec<f64>,
    pub gamma: Vec<f64>,
    pub zeta2: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSpec {
    Physical(PhysicalParams),
    Compound(CompoundParams),
    Scaled(ScaledParams),
    General(GeneralSpec),
}

fn dmatrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::Validation(format!("{name}: empty matrix")));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Validation(format!("{name}: ragged rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl ModelSpec {
    /// Resolve to the general frame, keeping the scaled parameters when the
    /// model is (or reduces to) a block embedding.
    pub fn resolve(&self) -> Result<(GeneralModel, Option<ScaledParams>)> {
        match self {
            ModelSpec::Physical(p) => {
                let s = physical_to_scaled(p)?;
                Ok((block_embedding(&s)?, Some(s)))
            }
            ModelSpec::Compound(p) => {
                let s = compound_to_scaled(p)?;
                Ok((block_embedding(&s)?, Some(s)))
            }
            ModelSpec::Scaled(s) => {
                s.validate()?;
                Ok((block_embedding(s)?, Some(s.clone())))
            }
            ModelSpec::General(g) => {
                let a = dmatrix(&g.a, "model.general.a")?;
                let b = dmatrix(&g.b, "model.general.b")?;
                let ou = OuSystem::new(a, b)?;
                let report = ou.validate().map_err(|e| match e {
                    Error::NonHurwitz { abscissa } => Error::Validation(format!(
                        "model.general.a: not Hurwitz (spectral abscissa {abscissa})"
                    )),
                    other => other,
                })?;
                if !report.ok {
                    return Err(Error::Validation(format!(
                        "model.general: spectral abscissa {}, controllability rank {}",
                        report.spectral_abscissa, report.controllability_rank
                    )));
                }
                let exc = Excitation {
                    a: DVector::from_column_slice(&g.exc_a),
                    gamma: DVector::from_column_slice(&g.gamma),
                };
                let m = GeneralModel::new(ou, exc, g.zeta2, g.kappa)?;
                Ok((m, None))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Lambda2SweepCfg {
    pub omega_min: f64,
    pub omega_max: f64,
    pub n_points: usize,
}

impl Default for Lambda2SweepCfg {
    fn default() -> Self {
        Self {
            omega_min: 0.1,
            omega_max: 5.0,
            n_points: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundaryCfg {
    pub kind: BoundaryKind,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub n_points: usize,
    /// Curves are emitted once per zeta1 value; empty = use the model's.
    pub zeta1_list: Vec<f64>,
    pub omega: Option<f64>,
    pub eps: Option<f64>,
}

impl Default for BoundaryCfg {
    fn default() -> Self {
        Self {
            kind: BoundaryKind::Noise,
            kappa_min: 0.1,
            kappa_max: 1.0,
            n_points: 91,
            zeta1_list: Vec::new(),
            omega: None,
            eps: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateCfg {
    pub eps: Vec<f64>,
}

impl Default for EstimateCfg {
    fn default() -> Self {
        Self { eps: vec![0.2] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateCfg {
    /// Initial state (v1, v2, u1, u2).
    pub u0: [f64; 4],
    /// Keep every k-th grid point in the emitted CSV.
    pub thin: usize,
}

impl Default for SimulateCfg {
    fn default() -> Self {
        Self {
            u0: [0.0, 0.0, 0.1, 0.0],
            thin: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsdCfg {
    pub omega: Vec<f64>,
    pub delta: Vec<f64>,
    pub kernel: KernelKind,
}

impl Default for PsdCfg {
    fn default() -> Self {
        Self {
            omega: vec![1.0],
            delta: vec![0.2, 0.1, 0.05],
            kernel: KernelKind::Box,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub scheme: SimScheme,
    #[serde(default)]
    pub lambda2_sweep: Lambda2SweepCfg,
    #[serde(default)]
    pub boundary: BoundaryCfg,
    #[serde(default)]
    pub estimate: EstimateCfg,
    #[serde(default)]
    pub simulate: SimulateCfg,
    #[serde(default)]
    pub psd: PsdCfg,
}

/// Parse and validate a config file; errors name the offending key.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    cfg.model.resolve().map_err(|e| match e {
        Error::InvalidMassRatio(r) => {
            Error::Validation(format!("r_mass must lie in (0,1), got {r}"))
        }
        Error::Validation(s) => Error::Validation(s),
        other => Error::Validation(other.to_string()),
    })?;
    cfg.scheme
        .validate()
        .map_err(|e| Error::Validation(format!("scheme: {e}")))?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Emission helpers
// ---------------------------------------------------------------------------

/// 17-significant-digit serialization so cross-run diffs are exact.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_file(out_dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Command implementations
// ---------------------------------------------------------------------------

fn run_lambda2_sweep(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let (model, scaled) = cfg.model.resolve()?;
    let s = &cfg.lambda2_sweep;
    if s.n_points < 2 || s.omega_min <= 0.0 || s.omega_max <= s.omega_min {
        return Err(Error::Validation(
            "lambda2_sweep: need omega_max > omega_min > 0 and n_points >= 2".into(),
        ));
    }
    let block = scaled.or_else(|| model.as_block().ok());
    let mut csv = String::from("omega,lambda2_resolvent");
    if block.is_some() {
        csv.push_str(",lambda2_block");
    }
    csv.push('\n');
    for i in 0..s.n_points {
        let omega = s.omega_min + (s.omega_max - s.omega_min) * i as f64 / (s.n_points - 1) as f64;
        let res = lambda2(&model, omega, Lambda2Method::Resolvent)?;
        let _ = write!(csv, "{},{}", fmt17(omega), fmt17(res));
        if let Some(p) = &block {
            let _ = write!(csv, ",{}", fmt17(lambda2_block(p, omega)));
        }
        csv.push('\n');
    }
    Ok(vec![write_file(out, "lambda2_sweep.csv", &csv)?])
}

fn run_boundary(cfg: &RunConfig, out: &Path, kind: Option<BoundaryKind>) -> Result<Vec<PathBuf>> {
    let (_, scaled) = cfg.model.resolve()?;
    let base = scaled.ok_or_else(|| {
        Error::Validation("boundary curves require a block model (scaled parameters)".into())
    })?;
    let b = &cfg.boundary;
    if b.n_points < 2 || b.kappa_min <= 0.0 || b.kappa_max <= b.kappa_min {
        return Err(Error::Validation(
            "boundary: need kappa_max > kappa_min > 0 and n_points >= 2".into(),
        ));
    }
    let kind = kind.unwrap_or(b.kind);
    let zeta1s = if b.zeta1_list.is_empty() {
        vec![base.zeta1]
    } else {
        b.zeta1_list.clone()
    };
    let mut files = Vec::new();
    for zeta1 in zeta1s {
        let params = ScaledParams { zeta1, ..base };
        let mut csv = String::from("kappa,nu_c\n");
        for i in 0..b.n_points {
            let kappa =
                b.kappa_min + (b.kappa_max - b.kappa_min) * i as f64 / (b.n_points - 1) as f64;
            let q = BoundaryQuery {
                kind,
                kappa,
                omega: b.omega,
                eps: b.eps,
            };
            let nu_c = stability_boundary(&q, &params)?;
            let _ = writeln!(csv, "{},{}", fmt17(kappa), fmt17(nu_c));
        }
        let kind_name = match kind {
            BoundaryKind::Noise => "noise",
            BoundaryKind::Mathieu => "mathieu",
            BoundaryKind::Periodic => "periodic",
        };
        let name = format!("boundary_{kind_name}_zeta1_{zeta1}.csv");
        files.push(write_file(out, &name, &csv)?);
    }
    Ok(files)
}

/// One row of the estimate report: both estimators side by side with the
/// analytic expansion and the closed-form upper bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateRow {
    pub eps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub angle: Option<LyapEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lognorm: Option<LyapEstimate>,
    pub expansion: f64,
    pub upper_bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub seed: u64,
    pub rows: Vec<EstimateRow>,
}

fn run_estimate(
    cfg: &RunConfig,
    out: &Path,
    eps_override: Option<&[f64]>,
    method: Option<MethodArg>,
) -> Result<Vec<PathBuf>> {
    let (model, _) = cfg.model.resolve()?;
    let eps_list: Vec<f64> = eps_override
        .map(|e| e.to_vec())
        .unwrap_or_else(|| cfg.estimate.eps.clone());
    if eps_list.is_empty() {
        return Err(Error::Validation("estimate: empty eps list".into()));
    }
    let ub = upper_bound(&model)?;
    let mut rows = Vec::new();
    for &eps in &eps_list {
        if eps < 0.0 {
            return Err(Error::Validation(format!("estimate: eps {eps} < 0")));
        }
        let angle = match method {
            None | Some(MethodArg::Angle) => {
                Some(estimate_lyapunov_angle(&model, eps, &cfg.scheme)?)
            }
            _ => None,
        };
        let lognorm = match method {
            None | Some(MethodArg::Lognorm) => {
                Some(estimate_lyapunov_lognorm(&model, eps, &cfg.scheme)?)
            }
            _ => None,
        };
        rows.push(EstimateRow {
            eps,
            angle,
            lognorm,
            expansion: expansion(&model, eps, Scaling::NoiseOnly)?,
            upper_bound: ub,
        });
    }
    let report = EstimateReport {
        seed: cfg.scheme.seed,
        rows,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    Ok(vec![write_file(out, "estimate.json", &json)?])
}

fn run_simulate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let (_, scaled) = cfg.model.resolve()?;
    let params = scaled.ok_or_else(|| {
        Error::Validation("simulate requires a block model (scaled parameters)".into())
    })?;
    let [v1, v2, u1, u2] = cfg.simulate.u0;
    let thin = cfg.simulate.thin.max(1);
    let path = simulate_nonlinear(&params, &cfg.scheme, &NonlinearState::new(v1, v2, u1, u2))?;
    let mut csv = String::from("t,v1,v2,u1,u2\n");
    for (i, s) in path.states.iter().enumerate().step_by(thin) {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            fmt17(i as f64 * path.dt),
            fmt17(s.v1),
            fmt17(s.v2),
            fmt17(s.u1),
            fmt17(s.u2)
        );
    }
    Ok(vec![write_file(out, "path.csv", &csv)?])
}

fn run_psd(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let (model, _) = cfg.model.resolve()?;
    let p = &cfg.psd;
    if p.omega.is_empty() || p.delta.is_empty() {
        return Err(Error::Validation("psd: empty omega or delta list".into()));
    }
    let mut csv = String::from("omega,analytic,mollified,stderr,delta,kernel\n");
    for &omega in &p.omega {
        let analytic = xi_psd_limit(&model, omega)?;
        for &delta in &p.delta {
            let kernel = MollifierKernel {
                kind: p.kernel,
                delta,
            };
            let est = xi_psd_mollified(&model, omega, &kernel, &cfg.scheme)?;
            let kname = match p.kernel {
                KernelKind::Box => "box",
                KernelKind::Triangle => "triangle",
            };
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                fmt17(omega),
                fmt17(analytic),
                fmt17(est.value),
                fmt17(est.stderr),
                fmt17(delta),
                kname
            );
        }
    }
    Ok(vec![write_file(out, "psd.csv", &csv)?])
}

// ---------------------------------------------------------------------------
// Verify suite
// ---------------------------------------------------------------------------

/// One invariant check: name and outcome.
pub struct VerifyItem {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check_fn(name: &'static str, f: impl FnOnce() -> std::result::Result<(), String>) -> VerifyItem {
    match f() {
        Ok(()) => VerifyItem {
            name,
            passed: true,
            detail: String::new(),
        },
        Err(detail) => VerifyItem {
            name,
            passed: false,
            detail,
        },
    }
}

/// Fast invariant suite over the configured model (plus internal reference
/// models); pure closed-form identities and short Monte Carlo runs.
pub fn run_verify(cfg: &RunConfig) -> Result<Vec<VerifyItem>> {
    use crate::asymptotics::{adjoint_b, bilinear_average, f1_residual};
    use crate::linalg::cosine_transform;
    use crate::ou::stationary_covariance;
    use rand::Rng;

    let (model, scaled) = cfg.model.resolve()?;
    let mut items = Vec::new();

    // Reference block family for identities that need scaled parameters.
    let base = scaled.clone().unwrap_or(ScaledParams {
        zeta1: 0.2,
        zeta2: 0.1,
        chi: 1.0,
        kappa: 0.5,
        nu: 1.0,
        r_mass: 0.25,
    });

    items.push(check_fn(
        "lambda2 three-way agreement (100 random block models)",
        || {
            let mut rng =
                crate::rng::substream(cfg.scheme.seed, 0, crate::rng::Stream::InitialCondition);
            let mut out = Ok(());
            for i in 0..100 {
                let zeta2 = rng.gen::<f64>() * 0.4 + 0.01;
                let p = ScaledParams {
                    zeta1: rng.gen::<f64>() * 0.8 + 0.02,
                    zeta2,
                    chi: rng.gen::<f64>() * 2.0 + 0.2,
                    kappa: zeta2 + rng.gen::<f64>() * 1.5 + 0.05,
                    nu: rng.gen::<f64>() * 2.0 + 0.05,
                    r_mass: 0.25,
                };
                let m = block_embedding(&p).map_err(|e| e.to_string())?;
                let omega = 2.0 * m.kappa_d().map_err(|e| e.to_string())?;
                let res =
                    lambda2(&m, omega, Lambda2Method::Resolvent).map_err(|e| e.to_string())?;
                let adj = lambda2(&m, omega, Lambda2Method::Adjoint).map_err(|e| e.to_string())?;
                let blk = lambda2(&m, omega, Lambda2Method::BlockClosedForm)
                    .map_err(|e| e.to_string())?;
                if (res - adj).abs() > 1e-9 * res.abs() || (res - blk).abs() > 1e-9 * res.abs() {
                    out = Err(format!("model {i}: {res} vs {adj} vs {blk}"));
                    break;
                }
            }
            out
        },
    ));

    items.push(check_fn(
        "lambda2 equals pi times velocity spectral density",
        || {
            let m = block_embedding(&base).map_err(|e| e.to_string())?;
            let alpha = DVector::from_column_slice(&[0.0, 1.0]);
            let mut out = Ok(());
            for i in 1..=50 {
                let omega = 0.1 * i as f64;
                let l2 = lambda2(&m, omega, Lambda2Method::Resolvent).map_err(|e| e.to_string())?;
                let psd =
                    crate::ou::observable_psd(&m.ou, &alpha, omega).map_err(|e| e.to_string())?;
                if (l2 - std::f64::consts::PI * psd).abs() > 1e-12 * (1.0 + l2.abs()) {
                    out = Err(format!(
                        "omega {omega}: {l2} vs {}",
                        std::f64::consts::PI * psd
                    ));
                    break;
                }
            }
            out
        },
    ));

    items.push(check_fn("noise boundary minimum at kappa = chi/2", || {
        let p = ScaledParams { zeta2: 1.0, ..base };
        let q = BoundaryQuery {
            kind: BoundaryKind::Noise,
            kappa: p.chi / 2.0,
            omega: None,
            eps: None,
        };
        let v = stability_boundary(&q, &p).map_err(|e| e.to_string())?;
        let expect = (8.0 * p.zeta1 * p.zeta1 * p.zeta2).sqrt();
        if (v - expect).abs() < 1e-8 {
            Ok(())
        } else {
            Err(format!("{v} vs {expect}"))
        }
    }));

    items.push(check_fn("first-order corrector residual vanishes", || {
        let mut rng =
            crate::rng::substream(cfg.scheme.seed, 1, crate::rng::Stream::InitialCondition);
        let mut out = Ok(());
        'outer: for _ in 0..20 {
            let zeta2 = rng.gen::<f64>() * 0.3 + 0.01;
            let p = ScaledParams {
                zeta1: rng.gen::<f64>() * 0.8 + 0.02,
                zeta2,
                chi: rng.gen::<f64>() * 2.0 + 0.2,
                kappa: zeta2 + rng.gen::<f64>() + 0.05,
                nu: rng.gen::<f64>() + 0.05,
                r_mass: 0.25,
            };
            let m = block_embedding(&p).map_err(|e| e.to_string())?;
            for _ in 0..100 {
                let v = DVector::from_fn(2, |_, _| rng.gen::<f64>() * 4.0 - 2.0);
                let psi = rng.gen::<f64>() * std::f64::consts::TAU;
                let r = f1_residual(&m, &v, psi).map_err(|e| e.to_string())?;
                if r.abs() > 1e-10 {
                    out = Err(format!("residual {r}"));
                    break 'outer;
                }
            }
        }
        out
    }));

    items.push(check_fn("adjoint vector solves its linear system", || {
        let m = block_embedding(&base).map_err(|e| e.to_string())?;
        let kd = m.kappa_d().map_err(|e| e.to_string())?;
        let b = adjoint_b(&m).map_err(|e| e.to_string())?.b;
        let at = m.ou.a.transpose().map(|x| nalgebra::Complex::new(x, 0.0));
        let mut lhs = at * &b;
        for (l, bi) in lhs.iter_mut().zip(b.iter()) {
            *l -= nalgebra::Complex::new(0.0, 2.0 * kd) * bi;
        }
        let mut out = Ok(());
        for j in 0..lhs.len() {
            let resid = (lhs[j] + nalgebra::Complex::new(m.exc.a[j], 0.0)).norm();
            if resid > 1e-12 {
                out = Err(format!("residual {resid}"));
                break;
            }
        }
        out
    }));

    items.push(check_fn("adjoint/cosine-transform identity", || {
        let m = block_embedding(&base).map_err(|e| e.to_string())?;
        let kd = m.kappa_d().map_err(|e| e.to_string())?;
        let b = adjoint_b(&m).map_err(|e| e.to_string())?.b;
        let re_b = DVector::from_iterator(b.len(), b.iter().map(|z| z.re));
        let r = stationary_covariance(&m.ou).map_err(|e| e.to_string())?;
        let ra = &r * &m.exc.a;
        let s = cosine_transform(&m.ou.a, 2.0 * kd).map_err(|e| e.to_string())?;
        let lhs = re_b.dot(&ra);
        let rhs = std::f64::consts::PI * m.exc.a.dot(&(&s * &ra));
        if (lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()) {
            Ok(())
        } else {
            Err(format!("{lhs} vs {rhs}"))
        }
    }));

    items.push(check_fn(
        "stationary bilinear average matches covariance",
        || {
            let m = block_embedding(&base).map_err(|e| e.to_string())?;
            let mut c = DMatrix::zeros(2, 2);
            c[(0, 0)] = 1.0;
            let v = bilinear_average(&m.ou, &c).map_err(|e| e.to_string())?;
            let expect = base.nu * base.nu / (4.0 * base.zeta1 * base.chi * base.chi);
            if (v - expect).abs() < 1e-10 * (1.0 + expect) {
                Ok(())
            } else {
                Err(format!("{v} vs {expect}"))
            }
        },
    ));

    items.push(check_fn("angle estimator exact at eps = 0", || {
        let scheme = SimScheme {
            t_final: 20.0,
            burn_in: 2.0,
            n_traj: 2,
            ..cfg.scheme
        };
        let est = estimate_lyapunov_angle(&model, 0.0, &scheme).map_err(|e| e.to_string())?;
        if (est.value + model.zeta2).abs() < 1e-12 && est.stderr < 1e-12 {
            Ok(())
        } else {
            Err(format!("{} +- {}", est.value, est.stderr))
        }
    }));

    items.push(check_fn("estimator determinism (identical reruns)", || {
        let scheme = SimScheme {
            t_final: 10.0,
            burn_in: 1.0,
            n_traj: 2,
            ..cfg.scheme
        };
        let e1 = estimate_lyapunov_angle(&model, 0.2, &scheme).map_err(|e| e.to_string())?;
        let e2 = estimate_lyapunov_angle(&model, 0.2, &scheme).map_err(|e| e.to_string())?;
        if e1 == e2 {
            Ok(())
        } else {
            Err(format!("{} vs {}", e1.value, e2.value))
        }
    }));

    items.push(check_fn("single-mode set is exactly invariant", || {
        let scheme = SimScheme {
            dt: 1e-3,
            t_final: 5.0,
            burn_in: 0.0,
            seed: cfg.scheme.seed,
            n_traj: 1,
        };
        let path = simulate_nonlinear(&base, &scheme, &NonlinearState::new(0.0, 0.0, 0.0, 0.0))
            .map_err(|e| e.to_string())?;
        if path.states.iter().all(|s| s.u1 == 0.0 && s.u2 == 0.0) {
            Ok(())
        } else {
            Err("pendulum left the single-mode set".into())
        }
    }));

    items.push(check_fn(
        "Lyapunov-function sandwich at random states",
        || {
            let alpha = crate::nonlinear::choose_alpha(&base).map_err(|e| e.to_string())?;
            let consts =
                crate::nonlinear::stability_constants(&base, alpha).map_err(|e| e.to_string())?;
            let mut rng =
                crate::rng::substream(cfg.scheme.seed, 2, crate::rng::Stream::InitialCondition);
            let mut out = Ok(());
            for _ in 0..10_000 {
                let u = NonlinearState::new(
                    rng.gen::<f64>() * 20.0 - 10.0,
                    rng.gen::<f64>() * 20.0 - 10.0,
                    rng.gen::<f64>() * std::f64::consts::TAU,
                    rng.gen::<f64>() * 20.0 - 10.0,
                );
                let rep = crate::nonlinear::energy_functionals(&base, alpha, &u)
                    .map_err(|e| e.to_string())?;
                let n2 = u.norm() * u.norm();
                if !(consts.c1 * n2 - 1e-9 <= rep.f && rep.f <= consts.c2 + consts.c3 * n2 + 1e-9)
                    || !rep.lf_bound_ok
                {
                    out = Err(format!("bounds fail at {u:?}"));
                    break;
                }
            }
            out
        },
    ));

    Ok(items)
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::NumericalBlowup { .. } => 2,
        _ => 1,
    }
}

/// Configure the global worker pool from AUTOLYAP_THREADS (0 or unset = auto).
pub fn init_threads() {
    if let Ok(v) = std::env::var("AUTOLYAP_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

/// Run a parsed command; returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let common = cli.command.common();
    let mut cfg = match load_config(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code_for(&e);
        }
    };
    if let Some(seed) = common.seed {
        cfg.scheme.seed = seed;
    }
    println!("seed: {}", cfg.scheme.seed);

    let result: Result<Vec<PathBuf>> = match &cli.command {
        Command::Lambda2Sweep(_) => run_lambda2_sweep(&cfg, &common.out),
        Command::Boundary(c) => run_boundary(&cfg, &common.out, c.kind.map(Into::into)),
        Command::Estimate(c) => run_estimate(&cfg, &common.out, c.eps.as_deref(), c.method),
        Command::Simulate(_) => run_simulate(&cfg, &common.out),
        Command::Psd(_) => run_psd(&cfg, &common.out),
        Command::Verify(_) => {
            return match run_verify(&cfg) {
                Ok(items) => {
                    let mut all_ok = true;
                    for it in &items {
                        if it.passed {
                            println!("PASS {}", it.name);
                        } else {
                            println!("FAIL {} ({})", it.name, it.detail);
                            all_ok = false;
                        }
                    }
                    if all_ok {
                        0
                    } else {
                        3
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_code_for(&e)
                }
            };
        }
    };
    match result {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
