//! Small dense complex linear algebra helpers shared by the exact game and the
//! channel model.

use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::{Complex, DMatrix};

use crate::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type RMatrix = DMatrix<f64>;

const JITTER: f64 = 1e-12;

static JITTER_WARNED: AtomicBool = AtomicBool::new(false);

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn to_complex(m: &RMatrix) -> CMatrix {
    m.map(|x| C64::new(x, 0.0))
}

/// Largest |M(i,j) - conj(M(j,i))|.
pub fn hermitian_asymmetry(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn ensure_hermitian(m: &CMatrix, tol: f64) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidInput(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let asymmetry = hermitian_asymmetry(m);
    if asymmetry > tol * (1.0 + m.norm()) {
        return Err(Error::NotHermitian { asymmetry });
    }
    Ok(())
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    let sym = (m + m.adjoint()) * C64::new(0.5, 0.0);
    sym.symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// nalgebra's complex Cholesky takes complex square roots and so succeeds on
/// some indefinite inputs; a factor is accepted only with a real positive
/// diagonal.
fn checked_cholesky(m: CMatrix) -> Option<nalgebra::Cholesky<C64, nalgebra::Dyn>> {
    // Sums of H Q H^H products carry round-off in the imaginary part of the
    // diagonal; factor the Hermitian part so that the pivots are real.
    let hermitian = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    let chol = hermitian.cholesky()?;
    let l = chol.l_dirty();
    let ok = (0..l.nrows()).all(|i| {
        let d = l[(i, i)];
        d.re > 0.0 && d.re.is_finite() && d.im.abs() <= 1e-12 * d.re
    });
    ok.then_some(chol)
}

fn cholesky_or_jitter(m: &CMatrix) -> Result<nalgebra::Cholesky<C64, nalgebra::Dyn>> {
    if let Some(chol) = checked_cholesky(m.clone()) {
        return Ok(chol);
    }
    if !JITTER_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!("Cholesky failed; retrying with {JITTER:e} diagonal jitter");
    }
    let n = m.nrows();
    let jittered = m + identity(n) * C64::new(JITTER, 0.0);
    checked_cholesky(jittered).ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))
}

/// Natural log-determinant of a Hermitian positive definite matrix.
pub fn log_det_pd(m: &CMatrix) -> Result<f64> {
    let chol = cholesky_or_jitter(m)?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..m.nrows() {
        acc += l[(i, i)].re.ln();
    }
    let value = 2.0 * acc;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical(format!("log-determinant is {value}")))
    }
}

/// `log2 |I + m|` for a Hermitian PSD `m`.
pub fn log2_det_identity_plus(m: &CMatrix) -> Result<f64> {
    let n = m.nrows();
    Ok(log_det_pd(&(identity(n) + m))? / std::f64::consts::LN_2)
}

pub fn inverse_pd(m: &CMatrix) -> Result<CMatrix> {
    Ok(cholesky_or_jitter(m)?.inverse())
}

pub fn trace(m: &CMatrix) -> C64 {
    m.trace()
}

/// Real part of `Tr(a * b)` without forming the product.
pub fn trace_of_product(a: &CMatrix, b: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for k in 0..a.ncols() {
            acc += (a[(i, k)] * b[(k, i)]).re;
        }
    }
    acc
}

/// `W diag(p) W^H`.
pub fn precoder(w: &CMatrix, powers: &[f64]) -> CMatrix {
    let mut scaled = w.clone();
    for (j, &p) in powers.iter().enumerate() {
        let mut col = scaled.column_mut(j);
        col *= C64::new(p, 0.0);
    }
    &scaled * w.adjoint()
}

/// `H Q H^H`.
pub fn sandwich(h: &CMatrix, q: &CMatrix) -> CMatrix {
    h * q * h.adjoint()
}

/// `H W diag(p) W^H H^H`, computed as `(HW) diag(p) (HW)^H`.
pub fn received_covariance(h: &CMatrix, w: &CMatrix, powers: &[f64]) -> CMatrix {
    let hw = h * w;
    let mut scaled = hw.clone();
    for (j, &p) in powers.iter().enumerate() {
        let mut col = scaled.column_mut(j);
        col *= C64::new(p, 0.0);
    }
    scaled * hw.adjoint()
}

/// Max-entry distance of `u^H u` from the identity.
pub fn unitarity_defect(u: &CMatrix) -> f64 {
    let n = u.ncols();
    let g = u.adjoint() * u - identity(n);
    g.iter().map(|z| z.norm()).fold(0.0, f64::max)
}
