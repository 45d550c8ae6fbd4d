//! Small dense linear-algebra helpers shared by the filters and the M-step.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{JmlsError, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

const JITTER_START: f64 = 1e-9;
const JITTER_MAX: f64 = 1e-3;

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn symmetrized(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut m);
    m
}

/// Cholesky factorization with escalating diagonal jitter.
///
/// The jitter starts at `1e-9 * trace / n` and grows by a factor of ten up to
/// `1e-3 * trace / n`. A zero-trace matrix uses unit scale.
pub fn cholesky_jittered(m: &DMatrix<f64>, context: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let n = m.nrows();
    if n == 0 || m.iter().any(|v| !v.is_finite()) {
        return Err(JmlsError::NotPositiveDefinite { context });
    }
    let mut scale = m.trace() / n as f64;
    if !(scale > 0.0) {
        scale = 1.0;
    }
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-12) {
        let mut jittered = m.clone();
        for i in 0..n {
            jittered[(i, i)] += rel * scale;
        }
        if let Some(c) = Cholesky::new(jittered) {
            return Ok(c);
        }
        rel *= 10.0;
    }
    Err(JmlsError::NotPositiveDefinite { context })
}

pub fn log_det_chol(c: &Cholesky<f64, Dyn>) -> f64 {
    let l = c.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// A square-root factor `G` with `G Gᵀ = m` for a symmetric PSD matrix.
///
/// Uses the Cholesky factor when `m` is positive definite and a clipped
/// eigen-decomposition otherwise, so singular covariances are factored exactly.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return c.unpack();
    }
    let eig = symmetrized(m.clone()).symmetric_eigen();
    let mut g = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        g.column_mut(j).scale_mut(s);
    }
    g
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    symmetrized(m.clone())
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * (1.0 + m.amax())
}

/// Project onto the PSD cone by clipping eigenvalues below `floor_rel * trace`.
pub fn psd_project(m: &DMatrix<f64>, floor_rel: f64) -> DMatrix<f64> {
    let s = symmetrized(m.clone());
    let n = s.nrows();
    if n == 0 {
        return s;
    }
    let floor = floor_rel * s.trace().abs().max(f64::MIN_POSITIVE);
    if min_eigenvalue(&s) >= floor {
        return s;
    }
    let eig = s.symmetric_eigen();
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    symmetrized(v * DMatrix::from_diagonal(&clipped) * v.transpose())
}

/// `log N(e; 0, S)`.
pub fn gaussian_logpdf(e: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cholesky_jittered(cov, "gaussian covariance")?;
    let sol = chol.solve(e);
    let quad = e.dot(&sol);
    Ok(-0.5 * (e.len() as f64 * LN_2PI + log_det_chol(&chol) + quad))
}

/// Normalizes log-weights into probabilities and returns the log of the
/// normalizing constant. `None` when every weight is zero or non-finite.
pub fn normalize_log_weights(logw: &[f64]) -> Option<(Vec<f64>, f64)> {
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return None;
    }
    for v in &mut w {
        *v /= sum;
    }
    Some((w, max + sum.ln()))
}
