//! Random true systems and perturbed initial guesses for the two examples.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{JmlsError, Result};
use crate::model::{JmlsModel, ModeParams};

/// Closed interval `[lo, hi]` for uniform draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(JmlsError::InvalidArgument(format!(
                "{what} range [{}, {}] is empty",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// Parameter-draw law for a random true system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawRanges {
    /// Entries of `A` for scalar states, eigenvalues of `A` otherwise.
    pub a: Range,
    pub b: Range,
    pub c: Range,
    pub q: Range,
    pub r: Range,
    /// Weight on the self-transition in each row of `Pi`; the remainder is a
    /// flat Dirichlet draw.
    pub stickiness: f64,
}

impl Default for DrawRanges {
    fn default() -> Self {
        Self {
            a: Range::new(-1.0, 1.0),
            b: Range::new(-5.0, 5.0),
            c: Range::new(-5.0, 5.0),
            q: Range::new(0.01, 0.1),
            r: Range::new(0.01, 0.1),
            stickiness: 0.5,
        }
    }
}

impl DrawRanges {
    pub fn validate(&self) -> Result<()> {
        self.a.validate("A")?;
        self.b.validate("B")?;
        self.c.validate("C")?;
        self.q.validate("Q")?;
        self.r.validate("R")?;
        if self.q.lo <= 0.0 || self.r.lo <= 0.0 {
            return Err(JmlsError::InvalidArgument(
                "noise variances must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.stickiness) {
            return Err(JmlsError::InvalidArgument(format!(
                "stickiness {} outside [0, 1]",
                self.stickiness
            )));
        }
        Ok(())
    }
}

fn uniform_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    range: Range,
) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| range.sample(rng))
}

/// Row `n` is `stickiness · e_n + (1 - stickiness) · Dirichlet(1, ..., 1)`.
pub fn draw_sticky_pi<R: Rng + ?Sized>(rng: &mut R, k: usize, stickiness: f64) -> DMatrix<f64> {
    let mut pi = DMatrix::zeros(k, k);
    for n in 0..k {
        let g: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = g.iter().sum();
        for m in 0..k {
            pi[(n, m)] = (1.0 - stickiness) * g[m] / total;
        }
        pi[(n, n)] += stickiness;
    }
    pi
}

/// Haar-distributed orthogonal matrix from the QR factorization of a
/// Gaussian matrix with column signs fixed.
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Scalar-state system with `D ≡ 0` and every other entry uniform.
pub fn draw_example1_model<R: Rng + ?Sized>(rng: &mut R, ranges: &DrawRanges) -> JmlsModel {
    draw_model(rng, 1, 2, ranges)
}

/// Two-state, three-mode system with `A = V diag(λ) Vᵀ` and `Q = q I`.
pub fn draw_example2_model<R: Rng + ?Sized>(rng: &mut R, ranges: &DrawRanges) -> JmlsModel {
    draw_model(rng, 2, 3, ranges)
}

/// `n_u = n_y = 1`, `D ≡ 0`.
pub fn draw_model<R: Rng + ?Sized>(
    rng: &mut R,
    n_z: usize,
    k: usize,
    ranges: &DrawRanges,
) -> JmlsModel {
    let modes = (0..k)
        .map(|_| {
            let a = if n_z == 1 {
                uniform_matrix(rng, 1, 1, ranges.a)
            } else {
                let v = random_orthogonal(rng, n_z);
                let eig = DVector::from_fn(n_z, |_, _| ranges.a.sample(rng));
                &v * DMatrix::from_diagonal(&eig) * v.transpose()
            };
            let b = uniform_matrix(rng, n_z, 1, ranges.b);
            let c = uniform_matrix(rng, 1, n_z, ranges.c);
            let q = DMatrix::identity(n_z, n_z) * ranges.q.sample(rng);
            let r = DMatrix::from_element(1, 1, ranges.r.sample(rng));
            ModeParams {
                a,
                b,
                c,
                d: DMatrix::zeros(1, 1),
                q,
                r,
            }
        })
        .collect();
    JmlsModel::new(modes, draw_sticky_pi(rng, k, ranges.stickiness))
}

/// Multiplies every entry of `A, B, C, D, Pi` by an independent factor from
/// `factor` (rows of `Pi` renormalized) and rescales covariances as `S Q S`
/// with `S = diag(√f)`.
pub fn perturb_model<R: Rng + ?Sized>(rng: &mut R, truth: &JmlsModel, factor: Range) -> JmlsModel {
    let mut scale = |m: &DMatrix<f64>| m.map(|v| v * factor.sample(rng));
    let mut out = truth.clone();
    for mode in &mut out.modes {
        mode.a = scale(&mode.a);
        mode.b = scale(&mode.b);
        mode.c = scale(&mode.c);
        mode.d = scale(&mode.d);
    }
    out.pi = crate::psaem::row_normalize(&scale(&truth.pi));
    for mode in &mut out.modes {
        let sq = DVector::from_fn(mode.q.nrows(), |_, _| factor.sample(rng).sqrt());
        mode.q = DMatrix::from_diagonal(&sq) * &mode.q * DMatrix::from_diagonal(&sq);
        let sr = DVector::from_fn(mode.r.nrows(), |_, _| factor.sample(rng).sqrt());
        mode.r = DMatrix::from_diagonal(&sr) * &mode.r * DMatrix::from_diagonal(&sr);
    }
    out
}
