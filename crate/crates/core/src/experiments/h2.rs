//! H₂ distance between per-mode transfer functions from `u` to `y`.

use nalgebra::{Complex, DMatrix};
use serde::Serialize;

use crate::error::{JmlsError, Result};
use crate::model::{JmlsModel, ModeParams};

/// Largest permutation search accepted by [`match_modes`].
pub const MAX_MATCH_MODES: usize = 5;

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
}

/// Solves `P = A P Aᵀ + W` through the Kronecker form.
pub fn discrete_lyapunov(a: &DMatrix<f64>, w: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let lhs = DMatrix::<f64>::identity(n * n, n * n) - a.kronecker(a);
    let vec_w = DMatrix::from_column_slice(n * n, 1, w.as_slice());
    let sol = lhs.lu().solve(&vec_w)?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    Some((&p + p.transpose()) * 0.5)
}

/// H₂ norm of `(A, B, C, D)`; infinite when `A` is not stable.
pub fn h2_norm(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    if spectral_radius(a) >= 1.0 {
        return f64::INFINITY;
    }
    let Some(p) = discrete_lyapunov(a, &(b * b.transpose())) else {
        return f64::INFINITY;
    };
    let gram = c * p * c.transpose() + d * d.transpose();
    gram.trace().max(0.0).sqrt()
}

/// H₂ norm of the difference of the two modes' input-output maps.
pub fn h2_error(truth: &ModeParams, est: &ModeParams) -> f64 {
    let n1 = truth.a.nrows();
    let n2 = est.a.nrows();
    let n_u = truth.b.ncols();
    let n_y = truth.c.nrows();
    let mut a = DMatrix::zeros(n1 + n2, n1 + n2);
    a.view_mut((0, 0), (n1, n1)).copy_from(&truth.a);
    a.view_mut((n1, n1), (n2, n2)).copy_from(&est.a);
    let mut b = DMatrix::zeros(n1 + n2, n_u);
    b.view_mut((0, 0), (n1, n_u)).copy_from(&truth.b);
    b.view_mut((n1, 0), (n2, n_u)).copy_from(&est.b);
    let mut c = DMatrix::zeros(n_y, n1 + n2);
    c.view_mut((0, 0), (n_y, n1)).copy_from(&truth.c);
    c.view_mut((0, n1), (n_y, n2)).copy_from(&(-&est.c));
    let d = &truth.d - &est.d;
    h2_norm(&a, &b, &c, &d)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H2Report {
    /// Error of true mode `n` against its matched estimated mode.
    pub per_mode: Vec<f64>,
    /// Mean over the finite entries of `per_mode`; infinite if none are.
    pub mean: f64,
    /// `permutation[n]` is the estimated mode matched to true mode `n`.
    pub permutation: Vec<usize>,
    pub n_unstable: usize,
}

impl H2Report {
    fn from_errors(per_mode: Vec<f64>, permutation: Vec<usize>) -> Self {
        let finite: Vec<f64> = per_mode.iter().cloned().filter(|e| e.is_finite()).collect();
        let mean = if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        Self {
            n_unstable: per_mode.len() - finite.len(),
            per_mode,
            mean,
            permutation,
        }
    }
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

/// Aligns estimated modes to true modes by minimizing the summed H₂ error
/// over all permutations. Unstable matches count as infinite; ties between
/// infinite totals are broken by the sum of the finite errors.
pub fn match_modes(truth: &JmlsModel, est: &JmlsModel) -> Result<H2Report> {
    let k = truth.dims.k;
    if est.dims.k != k {
        return Err(JmlsError::DimensionMismatch {
            context: "number of modes",
            expected: k,
            got: est.dims.k,
        });
    }
    if k > MAX_MATCH_MODES {
        return Err(JmlsError::TooLarge {
            context: "exhaustive mode matching",
            size: k,
            limit: MAX_MATCH_MODES,
        });
    }
    let table: Vec<Vec<f64>> = truth
        .modes
        .iter()
        .map(|t| est.modes.iter().map(|e| h2_error(t, e)).collect())
        .collect();
    let key = |p: &[usize]| {
        let errs = p.iter().enumerate().map(|(n, &m)| table[n][m]);
        let n_inf = errs.clone().filter(|e| !e.is_finite()).count();
        let finite: f64 = errs.filter(|e| e.is_finite()).sum();
        (n_inf, finite)
    };
    let best = permutations(k)
        .into_iter()
        .min_by(|p, q| {
            let (a, b) = (key(p), key(q));
            a.0.cmp(&b.0).then(a.1.total_cmp(&b.1))
        })
        .expect("at least one permutation");
    let per_mode = best.iter().enumerate().map(|(n, &m)| table[n][m]).collect();
    Ok(H2Report::from_errors(per_mode, best))
}

/// `C (e^{iω} I - A)⁻¹ B + D`, or `None` on a pole at `ω`.
pub fn frequency_response(mode: &ModeParams, omega: f64) -> Option<DMatrix<Complex<f64>>> {
    let n = mode.a.nrows();
    let z = Complex::from_polar(1.0, omega);
    let lhs = DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { z } else { Complex::new(0.0, 0.0) };
        diag - Complex::new(mode.a[(i, j)], 0.0)
    });
    let b = mode.b.map(|v| Complex::new(v, 0.0));
    let x = lhs.lu().solve(&b)?;
    Some(mode.c.map(|v| Complex::new(v, 0.0)) * x + mode.d.map(|v| Complex::new(v, 0.0)))
}

/// `n` log-spaced frequencies from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| match i {
                    0 => lo,
                    _ if i + 1 == n => hi,
                    _ => (a + (b - a) * i as f64 / (n - 1) as f64).exp(),
                })
                .collect()
        }
    }
}
