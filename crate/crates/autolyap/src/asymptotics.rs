//! Closed-form layer: the second-order coefficient `lambda2(omega)` by three
//! independent routes, small-noise and combined-scaling expansions of the
//! Lyapunov exponent, critical noise-intensity boundaries, and the generator
//! identities used as numeric self-checks.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cosine_transform, ensure_hurwitz, resolvent};
use crate::model::{GeneralModel, OuSystem, ScaledParams};
use crate::ou::stationary_covariance;

type Cplx = Complex<f64>;

/// Evaluation route for `lambda2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lambda2Method {
    /// Cosine transform of the excitation autocovariance; any `omega > 0`.
    Resolvent,
    /// Adjoint-vector form; defined only at `omega = 2 kappa_d`.
    Adjoint,
    /// Block-oscillator closed form; requires a block embedding.
    BlockClosedForm,
}

/// Second-order coefficient of the small-noise expansion, evaluated at
/// excitation frequency `omega`.
pub fn lambda2(model: &GeneralModel, omega: f64, method: Lambda2Method) -> Result<f64> {
    if omega <= 0.0 {
        return Err(Error::InvalidParam("omega must be positive".into()));
    }
    ensure_hurwitz(&model.ou.a)?;
    match method {
        Lambda2Method::Resolvent => {
            let s = cosine_transform(&model.ou.a, omega)?;
            let r = stationary_covariance(&model.ou)?;
            let a = &model.exc.a;
            let gamma = &model.exc.gamma;
            let bg = &model.ou.b * gamma;
            let term = a.dot(&(&s * (&r * a))) + a.dot(&(&s * bg));
            Ok(std::f64::consts::PI / (omega * omega)
                * (term + gamma.norm_squared() / (2.0 * std::f64::consts::PI)))
        }
        Lambda2Method::Adjoint => {
            let kappa_d = model.kappa_d()?;
            let expected = 2.0 * kappa_d;
            if (omega - expected).abs() > 1e-12 * expected.max(1.0) {
                return Err(Error::FrequencyMismatch { omega, expected });
            }
            let b = adjoint_b(model)?;
            let re_b = DVector::from_iterator(b.b.len(), b.b.iter().map(|z| z.re));
            let r = stationary_covariance(&model.ou)?;
            let gamma = &model.exc.gamma;
            let bg = &model.ou.b * gamma;
            let num = re_b.dot(&(&r * &model.exc.a)) + re_b.dot(&bg) + gamma.norm_squared() / 2.0;
            Ok(num / (4.0 * kappa_d * kappa_d))
        }
        Lambda2Method::BlockClosedForm => {
            let p = model.as_block()?;
            Ok(lambda2_block(&p, omega))
        }
    }
}

/// Block-oscillator closed form
/// `omega^2 nu^2 / (2 [(chi^2 - omega^2)^2 + 4 zeta1^2 omega^2])`.
pub fn lambda2_block(p: &ScaledParams, omega: f64) -> f64 {
    let w2 = omega * omega;
    let chi2 = p.chi * p.chi;
    let denom = (chi2 - w2).powi(2) + 4.0 * p.zeta1 * p.zeta1 * w2;
    w2 * p.nu * p.nu / (2.0 * denom)
}

/// Asymptotic scaling regime of the expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// Small excitation only: `lambda(eps) = -zeta2 + eps^2 lambda2(2 kappa_d)`.
    NoiseOnly,
    /// Excitation and pendulum damping both scaled by `eps`:
    /// `lambda(eps) = eps^2 (-zeta2 + lambda2(2 kappa))`.
    NoiseAndDamping,
}

/// Second-order expansion of the Lyapunov exponent.
pub fn expansion(model: &GeneralModel, eps: f64, scaling: Scaling) -> Result<f64> {
    if eps < 0.0 {
        return Err(Error::InvalidParam("eps must be nonnegative".into()));
    }
    match scaling {
        Scaling::NoiseOnly => {
            let kappa_d = model.kappa_d()?;
            Ok(-model.zeta2 + eps * eps * lambda2(model, 2.0 * kappa_d, Lambda2Method::Resolvent)?)
        }
        Scaling::NoiseAndDamping => {
            let l2 = lambda2(model, 2.0 * model.kappa, Lambda2Method::Resolvent)?;
            Ok(eps * eps * (-model.zeta2 + l2))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    /// White/colored noise boundary from the second-order expansion.
    Noise,
    /// Deterministic Mathieu first-order tongue.
    Mathieu,
    /// Periodically forced block, first order.
    Periodic,
}

/// Query for one point of a critical-noise-intensity curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryQuery {
    pub kind: BoundaryKind,
    pub kappa: f64,
    #[serde(default)]
    pub omega: Option<f64>,
    #[serde(default)]
    pub eps: Option<f64>,
}

/// Critical excitation intensity `nu_c` above which the single mode loses
/// stability, per the stated first/second-order approximations.  `params`
/// supplies `chi`, `zeta1`, `zeta2`; the query's `kappa` is used.
pub fn stability_boundary(q: &BoundaryQuery, params: &ScaledParams) -> Result<f64> {
    if q.kappa <= 0.0 {
        return Err(Error::InvalidQuery("kappa must be positive".into()));
    }
    let chi2 = params.chi * params.chi;
    let k2 = q.kappa * q.kappa;
    match q.kind {
        BoundaryKind::Noise => {
            let num = params.zeta2 * ((chi2 - 4.0 * k2).powi(2) + 16.0 * params.zeta1.powi(2) * k2);
            Ok((num / (2.0 * k2)).sqrt())
        }
        BoundaryKind::Mathieu => {
            let (omega, eps) = mathieu_args(q)?;
            let w2 = omega * omega;
            let detune = 4.0 * k2 / w2 - 1.0;
            Ok((16.0 * params.zeta2.powi(2) + w2 / (eps * eps) * detune * detune).sqrt())
        }
        BoundaryKind::Periodic => {
            let (omega, eps) = mathieu_args(q)?;
            let w2 = omega * omega;
            let detune = 4.0 * k2 / w2 - 1.0;
            let filt = (chi2 - w2).powi(2) + 4.0 * params.zeta1.powi(2) * w2;
            let tongue = 16.0 * params.zeta2.powi(2) + w2 / (eps * eps) * detune * detune;
            Ok((filt * tongue).sqrt() / w2)
        }
    }
}

fn mathieu_args(q: &BoundaryQuery) -> Result<(f64, f64)> {
    let omega = q
        .omega
        .ok_or_else(|| Error::InvalidQuery("omega required for this boundary kind".into()))?;
    let eps = q
        .eps
        .ok_or_else(|| Error::InvalidQuery("eps required for this boundary kind".into()))?;
    if omega <= 0.0 || eps <= 0.0 {
        return Err(Error::InvalidQuery("omega and eps must be positive".into()));
    }
    Ok((omega, eps))
}

/// Complex adjoint vector `b = -(A^T - 2 i kappa_d I)^{-1} a`; the dot
/// products with `b` are bilinear (no conjugation).
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointVectorB {
    pub b: DVector<Cplx>,
}

pub fn adjoint_b(model: &GeneralModel) -> Result<AdjointVectorB> {
    let kappa_d = model.kappa_d()?;
    let at = model.ou.a.transpose();
    let inv = resolvent(&at, 2.0 * kappa_d)?;
    let ac = model.exc.a.map(|x| Cplx::new(x, 0.0));
    Ok(AdjointVectorB { b: -(inv * ac) })
}

/// Residual of the first-order corrector identity: the unexcited generator
/// applied to `F1 = (1/2 kappa_d) Re(i e^{2 i psi} <b, v>)` minus
/// `Q1 = (1/2 kappa_d) <a, v> sin 2 psi`.  Vanishes identically.
pub fn f1_residual(model: &GeneralModel, v: &DVector<f64>, psi: f64) -> Result<f64> {
    if v.len() != model.ou.dim() {
        return Err(Error::DimensionMismatch(format!(
            "v has length {}, OU dimension is {}",
            v.len(),
            model.ou.dim()
        )));
    }
    let kappa_d = model.kappa_d()?;
    let b = adjoint_b(model)?.b;
    let vc = v.map(|x| Cplx::new(x, 0.0));
    let av = (&model.ou.a * v).map(|x| Cplx::new(x, 0.0));
    let bv: Cplx = b.iter().zip(vc.iter()).map(|(x, y)| x * y).sum();
    let bav: Cplx = b.iter().zip(av.iter()).map(|(x, y)| x * y).sum();
    let phase = Cplx::new(0.0, 2.0 * psi).exp();
    let a0f1 =
        (Cplx::i() * phase / (2.0 * kappa_d) * (bav - Cplx::new(0.0, 2.0 * kappa_d) * bv)).re;
    let q1 = model.exc.a.dot(v) * (2.0 * psi).sin() / (2.0 * kappa_d);
    Ok(a0f1 - q1)
}

/// Stationary average of the quadratic form `v^T C v` under the OU invariant
/// measure: `sum_jk C_jk R_jk`.
pub fn bilinear_average(ou: &OuSystem, c: &DMatrix<f64>) -> Result<f64> {
    if c.nrows() != ou.dim() || c.ncols() != ou.dim() {
        return Err(Error::DimensionMismatch(format!(
            "C is {}x{}, OU dimension is {}",
            c.nrows(),
            c.ncols(),
            ou.dim()
        )));
    }
    let r = stationary_covariance(ou)?;
    Ok((c.transpose() * r).trace())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::expm;
    use crate::model::{block_embedding, Excitation, SimScheme};
    use crate::ou::OuStepper;
    use crate::rng::{substream, Stream};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn params() -> ScaledParams {
        ScaledParams {
            zeta1: 0.2,
            zeta2: 0.1,
            chi: 1.0,
            kappa: 0.5,
            nu: 1.0,
            r_mass: 0.25,
        }
    }

    #[test]
    fn lambda2_resonance_value() {
        let p = ScaledParams {
            kappa: 1.0,
            ..params()
        };
        let m = block_embedding(&p).unwrap();
        assert_abs_diff_eq!(
            lambda2(&m, 1.0, Lambda2Method::BlockClosedForm).unwrap(),
            3.125,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            lambda2(&m, 1.0, Lambda2Method::Resolvent).unwrap(),
            3.125,
            epsilon = 1e-9
        );
    }

    #[test]
    fn lambda2_three_way_reference() {
        let m = block_embedding(&params()).unwrap();
        let omega = 2.0 * 0.24f64.sqrt();
        let expect = 0.48 / (0.0016 + 0.1536);
        for method in [
            Lambda2Method::Resolvent,
            Lambda2Method::Adjoint,
            Lambda2Method::BlockClosedForm,
        ] {
            let v = lambda2(&m, omega, method).unwrap();
            assert_abs_diff_eq!(v, expect, epsilon = 1e-9 * expect);
        }
    }

    #[test]
    fn lambda2_pure_white_noise() {
        let ou = OuSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.4]),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        let exc = Excitation {
            a: DVector::zeros(2),
            gamma: DVector::from_element(1, 2.0),
        };
        let m = GeneralModel::new(ou, exc, 0.1, 1.0).unwrap();
        for omega in [0.5, 1.0, 3.0] {
            let v = lambda2(&m, omega, Lambda2Method::Resolvent).unwrap();
            assert_abs_diff_eq!(v, 4.0 / (2.0 * omega * omega), epsilon = 1e-12);
        }
    }

    #[test]
    fn lambda2_adjoint_frequency_mismatch() {
        let m = block_embedding(&params()).unwrap();
        assert!(matches!(
            lambda2(&m, 1.0, Lambda2Method::Adjoint),
            Err(Error::FrequencyMismatch { .. })
        ));
    }

    #[test]
    fn lambda2_equals_pi_times_velocity_psd() {
        let m = block_embedding(&params()).unwrap();
        let alpha = DVector::from_column_slice(&[0.0, 1.0]);
        for i in 0..50 {
            let omega = 0.1 + 0.1 * i as f64;
            let l2 = lambda2(&m, omega, Lambda2Method::Resolvent).unwrap();
            let psd = crate::ou::observable_psd(&m.ou, &alpha, omega).unwrap();
            assert_abs_diff_eq!(l2, std::f64::consts::PI * psd, epsilon = 1e-12 * (1.0 + l2));
            assert_abs_diff_eq!(
                l2,
                lambda2_block(&params(), omega),
                epsilon = 1e-11 * (1.0 + l2)
            );
        }
    }

    #[test]
    fn expansion_reference_values() {
        let m = block_embedding(&params()).unwrap();
        assert_abs_diff_eq!(expansion(&m, 0.0, Scaling::NoiseOnly).unwrap(), -0.1);
        assert_abs_diff_eq!(expansion(&m, 0.0, Scaling::NoiseAndDamping).unwrap(), 0.0);
        let l = expansion(&m, 0.2, Scaling::NoiseOnly).unwrap();
        assert_abs_diff_eq!(l, -0.1 + 0.04 * (0.48 / 0.1552), epsilon = 1e-10);
        let ld = expansion(&m, 0.2, Scaling::NoiseAndDamping).unwrap();
        assert_abs_diff_eq!(ld, 0.04 * (-0.1 + 0.5 / 0.16), epsilon = 1e-10);
    }

    #[test]
    fn expansion_even_in_eps() {
        let m = block_embedding(&params()).unwrap();
        // Depends on eps^2 only; negative eps is rejected rather than folded.
        let a = expansion(&m, 0.3, Scaling::NoiseOnly).unwrap();
        let b = -0.1 + 0.09 * lambda2(&m, 2.0 * 0.24f64.sqrt(), Lambda2Method::Resolvent).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        assert!(expansion(&m, -0.3, Scaling::NoiseOnly).is_err());
    }

    #[test]
    fn boundary_noise_minimum() {
        let p = ScaledParams {
            zeta2: 1.0,
            ..params()
        };
        let q = BoundaryQuery {
            kind: BoundaryKind::Noise,
            kappa: 0.5,
            omega: None,
            eps: None,
        };
        let v = stability_boundary(&q, &p).unwrap();
        assert_abs_diff_eq!(v, 0.32f64.sqrt(), epsilon = 1e-12);

        // Golden-section search over kappa confirms the minimum location/value.
        let f = |k: f64| {
            stability_boundary(
                &BoundaryQuery {
                    kind: BoundaryKind::Noise,
                    kappa: k,
                    omega: None,
                    eps: None,
                },
                &p,
            )
            .unwrap()
        };
        let (mut lo, mut hi) = (0.1f64, 1.0f64);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        while hi - lo > 1e-10 {
            let x1 = hi - phi * (hi - lo);
            let x2 = lo + phi * (hi - lo);
            if f(x1) < f(x2) {
                hi = x2;
            } else {
                lo = x1;
            }
        }
        let kmin = 0.5 * (lo + hi);
        assert_abs_diff_eq!(kmin, 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(
            f(kmin),
            (8.0 * p.zeta1 * p.zeta1 * p.zeta2).sqrt(),
            epsilon = 1e-8
        );
    }

    #[test]
    fn boundary_mathieu_on_tongue_tip() {
        let p = params();
        for (omega, eps) in [(1.0, 0.1), (2.0, 0.3), (0.7, 0.05)] {
            let q = BoundaryQuery {
                kind: BoundaryKind::Mathieu,
                kappa: omega / 2.0,
                omega: Some(omega),
                eps: Some(eps),
            };
            assert_abs_diff_eq!(
                stability_boundary(&q, &p).unwrap(),
                4.0 * p.zeta2,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn boundary_periodic_combines_filter_and_tongue() {
        let p = params();
        let q = BoundaryQuery {
            kind: BoundaryKind::Periodic,
            kappa: 0.4,
            omega: Some(1.2),
            eps: Some(0.2),
        };
        let v = stability_boundary(&q, &p).unwrap();
        let w2 = 1.44f64;
        let filt = (1.0 - w2).powi(2) + 4.0 * 0.04 * w2;
        let detune = 4.0 * 0.16 / w2 - 1.0;
        let tongue = 16.0 * 0.01 + w2 / 0.04 * detune * detune;
        assert_abs_diff_eq!(v, (filt * tongue).sqrt() / w2, epsilon = 1e-12);
    }

    #[test]
    fn boundary_missing_fields_rejected() {
        let q = BoundaryQuery {
            kind: BoundaryKind::Mathieu,
            kappa: 0.5,
            omega: None,
            eps: Some(0.1),
        };
        assert!(matches!(
            stability_boundary(&q, &params()),
            Err(Error::InvalidQuery(_))
        ));
    }

    #[test]
    fn adjoint_b_scalar_case() {
        let mu = 0.7;
        let ou = OuSystem::new(
            DMatrix::from_element(1, 1, -mu),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let exc = Excitation {
            a: DVector::from_element(1, 1.0),
            gamma: DVector::zeros(1),
        };
        let m = GeneralModel::new(ou, exc, 0.1, 0.5).unwrap();
        let kd = 0.24f64.sqrt();
        let b = adjoint_b(&m).unwrap().b;
        let expect = Cplx::new(1.0, 0.0) / Cplx::new(mu, 2.0 * kd);
        assert_abs_diff_eq!(b[0].re, expect.re, epsilon = 1e-14);
        assert_abs_diff_eq!(b[0].im, expect.im, epsilon = 1e-14);
        assert_abs_diff_eq!(b[0].re, mu / (mu * mu + 4.0 * kd * kd), epsilon = 1e-14);
    }

    #[test]
    fn adjoint_b_zero_a() {
        let mut m = block_embedding(&params()).unwrap();
        m.exc.a = DVector::zeros(2);
        let b = adjoint_b(&m).unwrap().b;
        assert_eq!(b[0], Cplx::new(0.0, 0.0));
        assert_eq!(b[1], Cplx::new(0.0, 0.0));
    }

    #[test]
    fn adjoint_b_residual_and_cosine_identity() {
        let m = block_embedding(&params()).unwrap();
        let kd = m.kappa_d().unwrap();
        let b = adjoint_b(&m).unwrap().b;
        // (A^T - 2 i kappa_d) b = -a
        let at = m.ou.a.transpose().map(|x| Cplx::new(x, 0.0));
        let mut lhs = at * &b;
        for (l, bi) in lhs.iter_mut().zip(b.iter()) {
            *l -= Cplx::new(0.0, 2.0 * kd) * bi;
        }
        for j in 0..2 {
            assert_abs_diff_eq!(lhs[j].re, -m.exc.a[j], epsilon = 1e-12);
            assert_abs_diff_eq!(lhs[j].im, 0.0, epsilon = 1e-12);
        }
        // <Re b, x> = pi <a, S(2 kappa_d) x> for x = R a.
        let re_b = DVector::from_iterator(2, b.iter().map(|z| z.re));
        let r = stationary_covariance(&m.ou).unwrap();
        let ra = &r * &m.exc.a;
        let s = cosine_transform(&m.ou.a, 2.0 * kd).unwrap();
        assert_abs_diff_eq!(
            re_b.dot(&ra),
            std::f64::consts::PI * m.exc.a.dot(&(&s * &ra)),
            epsilon = 1e-12
        );
    }

    #[test]
    fn f1_residual_vanishes() {
        let mut rng = substream(7, 0, Stream::InitialCondition);
        let m = block_embedding(&params()).unwrap();
        for _ in 0..100 {
            let v = DVector::from_fn(2, |_, _| rng.gen::<f64>() * 4.0 - 2.0);
            let psi = rng.gen::<f64>() * std::f64::consts::TAU;
            assert!(f1_residual(&m, &v, psi).unwrap().abs() < 1e-10);
        }
        assert_eq!(f1_residual(&m, &DVector::zeros(2), 1.3).unwrap(), 0.0);
    }

    #[test]
    fn bilinear_average_examples() {
        let m = block_embedding(&params()).unwrap();
        // v1^2 average.
        let mut c = DMatrix::zeros(2, 2);
        c[(0, 0)] = 1.0;
        assert_abs_diff_eq!(bilinear_average(&m.ou, &c).unwrap(), 1.25, epsilon = 1e-10);
        // Antisymmetric forms vanish on the symmetric covariance.
        let anti = DMatrix::from_row_slice(2, 2, &[0.0, 3.0, -3.0, 0.0]);
        assert_abs_diff_eq!(
            bilinear_average(&m.ou, &anti).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn bilinear_average_matches_quadrature_and_mc() {
        let m = block_embedding(&params()).unwrap();
        let c = DMatrix::from_row_slice(2, 2, &[0.6, 0.2, 0.2, 1.1]);
        let exact = bilinear_average(&m.ou, &c).unwrap();

        // Time-integral form: sum_l int_0^inf (e^{tA} B e_l)^T C (e^{tA} B e_l) dt.
        let dt = 1e-3;
        let t_max = 60.0;
        let step = expm(&(&m.ou.a * dt));
        let mut col = m.ou.b.column(0).into_owned();
        let mut integral = 0.0;
        let n = (t_max / dt) as usize;
        for i in 0..=n {
            let val = col.dot(&(&c * &col));
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            integral += w * val * dt;
            col = &step * col;
        }
        assert_abs_diff_eq!(exact, integral, epsilon = 1e-6);

        // Stationary Monte Carlo average.
        let scheme = SimScheme {
            dt: 1e-2,
            t_final: 200.0,
            burn_in: 0.0,
            seed: 11,
            n_traj: 1,
        };
        let stepper = OuStepper::new(&m.ou, scheme.dt).unwrap();
        let mut rng = substream(scheme.seed, 0, Stream::OuPath);
        let mut v = stepper.sample_stationary(&mut rng);
        let mut acc = 0.0;
        let n_steps = scheme.n_steps();
        for _ in 0..n_steps {
            acc += v.dot(&(&c * &v));
            let dw = stepper.sample_increments(&mut rng);
            v = stepper.step(&v, &dw, &mut rng);
        }
        let mc = acc / n_steps as f64;
        assert!(
            (mc - exact).abs() < 0.15 * exact.abs(),
            "mc {mc}, exact {exact}"
        );
    }

    #[test]
    fn three_way_agreement_random_grid() {
        let mut rng = substream(13, 0, Stream::InitialCondition);
        for _ in 0..100 {
            let zeta2 = rng.gen::<f64>() * 0.4 + 0.01;
            let p = ScaledParams {
                zeta1: rng.gen::<f64>() * 0.8 + 0.02,
                zeta2,
                chi: rng.gen::<f64>() * 2.0 + 0.2,
                kappa: zeta2 + rng.gen::<f64>() * 1.5 + 0.05,
                nu: rng.gen::<f64>() * 2.0 + 0.05,
                r_mass: 0.25,
            };
            let m = block_embedding(&p).unwrap();
            let omega = 2.0 * m.kappa_d().unwrap();
            let res = lambda2(&m, omega, Lambda2Method::Resolvent).unwrap();
            let adj = lambda2(&m, omega, Lambda2Method::Adjoint).unwrap();
            let blk = lambda2(&m, omega, Lambda2Method::BlockClosedForm).unwrap();
            assert!((res - adj).abs() <= 1e-9 * res.abs(), "{res} vs {adj}");
            assert!((res - blk).abs() <= 1e-9 * res.abs(), "{res} vs {blk}");
        }
    }
}
