//! Small dense matrix kernel: Lyapunov-equation solve, resolvent-based
//! cosine transform, matrix exponentials and OU-system validity checks.
//!
//! All matrices here are tiny (d <= 6 in every model the toolkit handles),
//! so the Lyapunov equation is solved as a d^2 x d^2 Kronecker linear system
//! and ranks come from a full SVD.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{Error, Result};

/// Relative tolerance for rank decisions in [`validate_ou_system`].
pub const RANK_TOL: f64 = 1e-10;

pub type Cplx = Complex<f64>;

/// Largest real part over the eigenvalues of `a`.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn ensure_hurwitz(a: &DMatrix<f64>) -> Result<()> {
    let abscissa = spectral_abscissa(a);
    if abscissa >= 0.0 {
        return Err(Error::NonHurwitz { abscissa });
    }
    Ok(())
}

fn ensure_square(a: &DMatrix<f64>, name: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{name} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

/// Solve the continuous Lyapunov equation `A R + R A^T = -M` for `R`.
///
/// `A` must be Hurwitz and `M` symmetric PSD; the solution is then the
/// stationary second moment of `dv = Av dt + B dW` with `M = B B^T`.
pub fn solve_lyapunov(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_square(a, "A")?;
    ensure_square(m, "M")?;
    let d = a.nrows();
    if m.nrows() != d {
        return Err(Error::DimensionMismatch(format!(
            "A is {d}x{d} but M is {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    ensure_hurwitz(a)?;

    // vec(AR) = (I (x) A) vec R, vec(R A^T) = (A (x) I) vec R  (column-major vec)
    let eye = DMatrix::<f64>::identity(d, d);
    let k = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = DVector::from_iterator(d * d, m.iter().map(|x| -x));
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::DimensionMismatch("singular Kronecker system".into()))?;
    let r = DMatrix::from_column_slice(d, d, sol.as_slice());
    // Symmetrize away rounding noise.
    Ok((&r + r.transpose()) * 0.5)
}

/// Matrix cosine transform `(1/pi) * int_0^inf e^{tA} cos(wt) dt`,
/// evaluated in closed form as `-(1/pi) Re (A - iwI)^{-1}`.
pub fn cosine_transform(a: &DMatrix<f64>, omega: f64) -> Result<DMatrix<f64>> {
    ensure_square(a, "A")?;
    ensure_hurwitz(a)?;
    let inv = resolvent(a, omega)?;
    Ok(inv.map(|z| -z.re / std::f64::consts::PI))
}

/// `(A - i w I)^{-1}` in complex arithmetic.
pub fn resolvent(a: &DMatrix<f64>, omega: f64) -> Result<DMatrix<Cplx>> {
    let d = a.nrows();
    let mut ac = a.map(|x| Cplx::new(x, 0.0));
    for j in 0..d {
        ac[(j, j)] -= Cplx::new(0.0, omega);
    }
    ac.lu()
        .try_inverse()
        .ok_or(Error::SingularResolvent { omega })
}

/// Validity report for the driving pair `(A, B)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub spectral_abscissa: f64,
    pub controllability_rank: usize,
    pub ok: bool,
}

/// Checks that `A` is Hurwitz and `(A, B)` is a controllable pair, i.e.
/// `rank [B, AB, ..., A^{d-1}B] = d`.
pub fn validate_ou_system(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<ValidationReport> {
    ensure_square(a, "A")?;
    let d = a.nrows();
    if b.nrows() != d {
        return Err(Error::DimensionMismatch(format!(
            "A is {d}x{d} but B has {} rows",
            b.nrows()
        )));
    }
    let m = b.ncols();
    let mut ctrl = DMatrix::<f64>::zeros(d, d * m);
    let mut block = b.clone();
    for k in 0..d {
        ctrl.view_mut((0, k * m), (d, m)).copy_from(&block);
        block = a * block;
    }
    let svd = ctrl.svd(false, false);
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > RANK_TOL * smax)
        .count();
    let abscissa = spectral_abscissa(a);
    Ok(ValidationReport {
        spectral_abscissa: abscissa,
        controllability_rank: rank,
        ok: abscissa < 0.0 && rank == d,
    })
}

/// Matrix exponential `e^A` (scaling and squaring, nalgebra's Pade kernel).
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().exp()
}

/// `int_0^h e^{sA} B ds` via the augmented exponential
/// `exp(h [[A, B], [0, 0]])` whose top-right block is the integral.
pub fn exp_integral(a: &DMatrix<f64>, b: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let d = a.nrows();
    let m = b.ncols();
    let mut aug = DMatrix::<f64>::zeros(d + m, d + m);
    aug.view_mut((0, 0), (d, d)).copy_from(&(a * h));
    aug.view_mut((0, d), (d, m)).copy_from(&(b * h));
    expm(&aug).view((0, d), (d, m)).into()
}

/// Symmetric PSD square root factor `L` with `L L^T = M`, tolerant of
/// tiny negative eigenvalues from rounding (clamped to zero).
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let d = m.nrows();
    let mut l = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let s = eig.eigenvalues[j].max(0.0).sqrt();
        for i in 0..d {
            l[(i, j)] = eig.eigenvectors[(i, j)] * s;
        }
    }
    l
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}
